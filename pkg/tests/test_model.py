import numpy as np
import pytest

from multiband_sched.model import ConfigurationError, SystemConfig, queue_update, validate_config


@pytest.mark.parametrize(
    "q, a, r, expected",
    [
        ([5.0], [1.0], [2.0], [4.0]),
        ([1.0], [0.0], [5.0], [0.0]),
        ([3.0, 0.0], [0.5, 2.0], [1.0, 1.0], [2.5, 1.0]),
    ],
)
def test_queue_update_examples(q, a, r, expected):
    assert np.allclose(queue_update(q, a, r), expected)


def test_queue_update_sums_over_bands():
    r = np.array([[0.5, 0.5], [0.0, 1.0]])
    assert np.allclose(queue_update([3.0, 0.0], [0.5, 2.0], r), [2.5, 1.0])


def test_queue_update_identity_without_traffic():
    q = np.array([1.5, 0.0, 7.0])
    assert np.array_equal(queue_update(q, np.zeros(3), np.zeros((3, 2))), q)


def test_queue_update_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        queue_update([1.0, 2.0], [1.0], [0.0, 0.0])
    with pytest.raises(ConfigurationError):
        queue_update([1.0, 2.0], [1.0, 1.0], np.zeros((3, 2)))


def test_system_config_invariants():
    cfg = SystemConfig(2, 3, noise_psd=0.5, v_param=4.0)
    assert cfg.vn0 == 2.0 and cfg.symbols_per_slot == 1.0
    for bad in (
        dict(n_users=0, n_bands=1, noise_psd=1.0, v_param=1.0),
        dict(n_users=1, n_bands=0, noise_psd=1.0, v_param=1.0),
        dict(n_users=1, n_bands=1, noise_psd=0.0, v_param=1.0),
        dict(n_users=1, n_bands=1, noise_psd=1.0, v_param=-1.0),
    ):
        with pytest.raises(ConfigurationError):
            SystemConfig(**bad)


def test_validate_rejects_zero_gain():
    cfg = SystemConfig(2, 2, 1.0, 1.0)
    rep = validate_config(cfg, [[1.0, 0.0], [2.0, 3.0]])
    assert not rep.ok
    assert any("gain must be positive" in e for e in rep.errors)
    with pytest.raises(ConfigurationError, match="gain must be positive"):
        rep.raise_if_invalid()


def test_validate_clean_inputs_empty_report():
    rep = validate_config(SystemConfig(2, 2, 1.0, 1.0), [[1.0, 2.0], [3.0, 4.0]])
    assert rep.ok and not rep.errors and not rep.warnings


def test_validate_warns_on_ties():
    rep = validate_config(SystemConfig(2, 2, 1.0, 1.0), [[1.0, 2.0], [1.0, 4.0]])
    assert rep.ok
    assert rep.warnings == ["tied gains band 1"]


def test_validate_nonfinite_and_shape():
    cfg = SystemConfig(2, 2, 1.0, 1.0)
    assert not validate_config(cfg, [[np.inf, 1.0], [1.0, 1.0]]).ok
    assert not validate_config(cfg, [[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]).ok
