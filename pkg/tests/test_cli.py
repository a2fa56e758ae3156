import json
import math

import numpy as np
import pytest

from multiband_sched.cli import main
from multiband_sched.files import (
    TRACE_COLUMNS, load_problem, load_scenario, read_sweep_csv, resummarize_bundle, scenario_from_dict,
)
from multiband_sched.model import ConfigurationError


def write(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


@pytest.fixture
def scenario_doc(data_dir):
    return json.loads((data_dir / "scenario_2x2.json").read_text())


def test_solve_fixture(data_dir, tmp_path, capsys):
    out = tmp_path / "solve.json"
    assert main(["solve", str(data_dir / "problem_n2.json"), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["rates"] == pytest.approx([math.log(3), 0.0], abs=1e-15)
    assert doc["lambdas"] == pytest.approx([0.0, 0.5])
    assert doc["active"] == [0] and doc["inactive"] == [1] and doc["iterations"] == 1
    assert doc["kkt"]["stationarity"] <= 1e-8
    assert "user,rate,lambda" in capsys.readouterr().out


def test_solve_zero_queue(tmp_path):
    prob = write(tmp_path / "p.json", {"schema_version": 1, "gains": [1.0, 3.0], "queues": [0, 0], "vn0": 1.0})
    out = tmp_path / "s.json"
    assert main(["solve", str(prob), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["rates"] == [0.0, 0.0]


def test_solve_unsorted_input_order(tmp_path):
    prob = write(tmp_path / "p.json", {"schema_version": 1, "gains": [2.0, 1.0], "queues": [1, 3], "v_param": 2.0, "noise_psd": 0.5})
    out = tmp_path / "s.json"
    assert main(["solve", str(prob), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["decode_order"] == [1, 0]
    assert doc["rates"] == pytest.approx([0.0, math.log(3)], abs=1e-15)


def test_malformed_json_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": 1,\n "gains": [1, 2,,]}\n')
    assert main(["solve", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "bad.json:2:" in err and "invalid JSON" in err


def test_problem_validation_errors(tmp_path):
    cases = [
        {"schema_version": 2, "gains": [1.0], "queues": [1.0], "vn0": 1.0},
        {"schema_version": 1, "gains": [1.0], "queues": [1.0], "vn0": 1.0, "extra": 1},
        {"schema_version": 1, "gains": [0.0], "queues": [1.0], "vn0": 1.0},
        {"schema_version": 1, "gains": [1.0, 2.0], "queues": [1.0], "vn0": 1.0},
        {"schema_version": 1, "gains": [1.0], "queues": [1.0]},
    ]
    for i, doc in enumerate(cases):
        with pytest.raises(ConfigurationError):
            load_problem(write(tmp_path / f"p{i}.json", doc))
        assert main(["solve", str(tmp_path / f"p{i}.json"), "--out", str(tmp_path / "o.json")]) == 1


def test_scenario_unknown_field_rejected(tmp_path, scenario_doc):
    scenario_doc["system"]["colour"] = "red"
    with pytest.raises(ConfigurationError, match="system"):
        load_scenario(write(tmp_path / "s.json", scenario_doc))


def test_scenario_per_chain_grid(scenario_doc):
    chain = scenario_doc["channel"]
    scenario_doc["channel"] = {"chains": [[chain, chain], [chain, chain]]}
    sc = scenario_from_dict(scenario_doc)
    assert sc.channel.shape == (2, 2)


def test_simulate_deterministic_bundle(data_dir, tmp_path):
    args = ["simulate", str(data_dir / "scenario_2x2.json"), "--horizon", "300"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "summary.json").read_bytes()
    assert a == (tmp_path / "b" / "summary.json").read_bytes()
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_simulate_horizon_override_and_header(data_dir, tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", str(data_dir / "scenario_2x2.json"), "--horizon", "40", "--out", str(out)]) == 0
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert len(lines) - 1 == 40 * 2 * 2
    assert json.loads((out / "summary.json").read_text())["horizon"] == 40


def test_trace_round_trip(data_dir, tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", str(data_dir / "scenario_2x2.json"), "--horizon", "1200", "--out", str(out)]) == 0
    stored = json.loads((out / "summary.json").read_text())
    assert stored["stability"] is not None
    assert resummarize_bundle(out) == stored


def test_zero_arrival_scenario_no_power(tmp_path, scenario_doc):
    scenario_doc["arrivals"] = {"kind": "deterministic", "mean": 0.0}
    path = write(tmp_path / "s.json", scenario_doc)
    out = tmp_path / "run"
    assert main(["simulate", str(path), "--horizon", "100", "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["power_efficiency"] == 0.0


def test_simulate_figures(data_dir, tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", str(data_dir / "scenario_2x2.json"), "--horizon", "50", "--out", str(out), "--figures", str(out)]) == 0
    assert (out / "trace.png").stat().st_size > 1000


def test_sweep_single_row(data_dir, tmp_path):
    out = tmp_path / "sweep.csv"
    args = ["sweep", str(data_dir / "scenario_2x2.json"), "--v-values", "5", "--seeds", "3", "--horizon", "50", "--out", str(out)]
    assert main(args) == 0
    rows = read_sweep_csv(out)
    assert len(rows) == 1
    assert rows[0]["V"] == "5" and rows[0]["seed"] == "3" and rows[0]["stable"] == "NA"


def test_sweep_stdout_and_figures(data_dir, tmp_path, capsys):
    args = ["sweep", str(data_dir / "scenario_2x2.json"), "--v-values", "1,10", "--seeds", "1,2", "--horizon", "50", "--figures", str(tmp_path)]
    assert main(args) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "V,seed,power,mean_queue,stable" and len(lines) == 5
    assert (tmp_path / "sweep.png").exists()


def test_sweep_overload_unstable(data_dir, tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", str(data_dir / "overload_2x2.json"), "--v-values", "1e6", "--seeds", "1,2", "--out", str(out)]) == 0
    assert [r["stable"] for r in read_sweep_csv(out)] == ["false", "false"]


def test_sweep_needs_values(data_dir):
    with pytest.raises(SystemExit):
        main(["sweep", str(data_dir / "scenario_2x2.json"), "--v-values", ""])


def test_verify_single_instance(capsys):
    assert main(["verify", "--instances", "1", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l.startswith("[")]
    assert len(lines) == 9
    assert all("PASS" in l and ": 1 instances," in l for l in lines)


def test_verify_injected_fault_fails(capsys):
    assert main(["verify", "--instances", "20", "--inject-fault"]) == 2
    assert "[FAIL] kkt-certificate" in capsys.readouterr().out


def test_verify_deterministic(capsys):
    main(["verify", "--instances", "5", "--seed", "9"])
    first = capsys.readouterr().out
    main(["verify", "--instances", "5", "--seed", "9"])
    assert capsys.readouterr().out == first
