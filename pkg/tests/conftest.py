from pathlib import Path

import pytest

DATA = Path(__file__).resolve().parents[1] / "src" / "multiband_sched" / "data"
_LINES = pytest.StashKey[list]()


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def acceptance(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(_LINES, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(" ")[0])):
            terminalreporter.write_line(line)
