import math

import numpy as np
import pytest

from multiband_sched.energy import superposition_energies
from multiband_sched.model import ConfigurationError
from multiband_sched.oracle import oracle_solve
from multiband_sched.solver import (
    BandProblem, SolverConsistencyError, closed_form_rates, gradient_f, inactivity_test, kkt_check,
    objective_f, solve_band, solve_gains, update_lagrange,
)


def two_user(q, vn0=1.0):
    return BandProblem.from_sorted([1.0, 2.0], q, vn0)


def test_band_problem_invariants():
    with pytest.raises(ConfigurationError):
        BandProblem([1.0, 0.5], [1.0, 0.0], 1.0)  # no virtual user
    with pytest.raises(ConfigurationError):
        BandProblem([0.5, 1.0, 0.0], [1.0, 1.0, 0.0], 1.0)  # not decreasing
    with pytest.raises(ConfigurationError):
        BandProblem([1.0, 0.0], [-1.0, 0.0], 1.0)
    with pytest.raises(ConfigurationError):
        BandProblem([1.0, 0.0], [1.0, 0.0], 0.0)


def test_objective_examples():
    prob = BandProblem.from_sorted([1.0], [2.0], 1.0)
    assert objective_f([0.0], prob) == 0.0
    assert objective_f([math.log(2)], prob) == pytest.approx(1 - 2 * math.log(2), abs=1e-15)


def test_objective_matches_superposition_energy():
    rng = np.random.default_rng(11)
    d = np.sort(rng.uniform(0.1, 5.0, 5))
    q = rng.uniform(0.0, 10.0, 5)
    r = rng.uniform(0.0, 1.0, 5)
    n0, v = 0.3, 4.0
    prob = BandProblem.from_sorted(d, q, v * n0)
    energy = superposition_energies(d, r, n0).total
    assert objective_f(r, prob) == pytest.approx(v * energy - q @ r, rel=1e-13)


def test_gradient_at_zero_single_user():
    prob = BandProblem.from_sorted([4.0], [3.0], 2.0)
    assert gradient_f([0.0], prob) == pytest.approx([2.0 / 4.0 - 3.0])


def test_closed_form_examples():
    r, ok = closed_form_rates([0.0], BandProblem.from_sorted([1.0], [2.0], 1.0))
    assert ok.all() and r == pytest.approx([math.log(2)])
    r, _ = closed_form_rates([0.0, 0.0], two_user([3.0, 2.0]))
    assert r == pytest.approx([math.log(2), math.log(2)], abs=1e-15)
    r, _ = closed_form_rates([0.0, 0.5], two_user([3.0, 1.0]))
    assert r == pytest.approx([math.log(3), 0.0], abs=1e-15)


def test_closed_form_signals_missing_stationary_point():
    # q_1 - q_2 < 0: no all-active stationary point for user 1
    r, ok = closed_form_rates([0.0, 0.0], two_user([1.0, 3.0]))
    assert not ok.all() and np.isnan(r[~ok]).all()


def test_inactivity_examples():
    assert inactivity_test(1, [0.0, 0.0], two_user([3.0, 1.0]))
    assert not inactivity_test(0, [0.0, 0.0], two_user([3.0, 1.0]))
    assert not inactivity_test(0, [0.0], BandProblem.from_sorted([1.0], [2.0], 1.0))
    assert inactivity_test(0, [0.0], BandProblem.from_sorted([1.0], [0.5], 1.0))


def test_inactivity_agrees_with_negative_closed_form():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(1, 6))
        prob = BandProblem.from_sorted(np.sort(rng.uniform(0.1, 5, n)), rng.uniform(0, 10, n), 1.0)
        r, ok = closed_form_rates(np.zeros(n), prob)
        for k in range(n):
            if ok[k] and abs(r[k]) > 1e-9:
                assert inactivity_test(k, np.zeros(n), prob) == (r[k] < 0)


def test_update_lagrange_examples():
    assert update_lagrange({0, 1}, set(), two_user([3.0, 1.0])) == pytest.approx([0.0, 0.0])
    assert update_lagrange({0}, {1}, two_user([3.0, 1.0])) == pytest.approx([0.0, 0.5])
    lam = update_lagrange(set(), {0, 1}, two_user([0.3, 0.1]))
    assert lam == pytest.approx([0.7, 0.4])
    r, _ = closed_form_rates(lam, two_user([0.3, 0.1]))
    assert r == pytest.approx([0.0, 0.0], abs=1e-15)


def test_solve_examples():
    sol = solve_band(two_user([3.0, 1.0]))
    assert sol.rates == pytest.approx([math.log(3), 0.0], abs=1e-15)
    assert sol.lambdas == pytest.approx([0.0, 0.5])
    assert sol.iterations == 1 and sol.active == (0,) and sol.inactive == (1,)

    sol = solve_band(two_user([3.0, 2.0]))
    assert sol.rates == pytest.approx([math.log(2)] * 2, abs=1e-15)
    assert sol.iterations == 0 and not sol.lambdas.any()


def test_solve_all_zero_queues():
    sol = solve_band(BandProblem.from_sorted([1.0, 2.0, 3.0], [0.0, 0.0, 0.0], 1.0))
    assert not sol.rates.any() and sol.active == () and sol.iterations == 0


def test_solution_structure():
    rng = np.random.default_rng(8)
    for _ in range(300):
        n = int(rng.integers(1, 9))
        prob = BandProblem.from_sorted(np.sort(rng.uniform(0.01, 10, n)), rng.uniform(0, 50, n), 1.0)
        sol = solve_band(prob)
        assert set(sol.active) | set(sol.inactive) == set(range(n))
        assert not set(sol.active) & set(sol.inactive)
        assert sol.iterations <= n
        assert not sol.rates[list(sol.inactive)].any()
        assert not sol.lambdas[list(sol.active)].any()
        # users only ever leave the active set
        assert len(set(sol.removal_order)) == len(sol.removal_order)
        assert sol.lambda_history.shape == (sol.iterations + 1, n)


def test_solve_matches_oracle_small():
    rng = np.random.default_rng(1)
    for _ in range(30):
        n = int(rng.integers(2, 7))
        prob = BandProblem.from_sorted(np.sort(rng.uniform(0.05, 5, n)), rng.uniform(0, 20, n), 1.0)
        assert solve_band(prob).rates == pytest.approx(oracle_solve(prob), abs=1e-6)


def test_kkt_check_detects_bad_points():
    prob = two_user([3.0, 1.0])
    rep = kkt_check([0.0, 0.0], [0.0, 0.0], prob)
    assert rep.stationarity > 0.5 and not rep.ok()
    sol = solve_band(prob)
    assert kkt_check(sol.rates, sol.lambdas, prob).ok()
    bumped = sol.rates + np.array([0.1, 0.0])
    assert kkt_check(bumped, sol.lambdas, prob).stationarity > 1e-3


def test_selection_rules_agree():
    prob = BandProblem.from_sorted([0.2, 0.5, 1.0, 3.0, 7.0], [10.0, 1.0, 8.0, 0.5, 9.0], 1.0)
    base = solve_band(prob).rates
    assert solve_band(prob, rule="largest").rates == pytest.approx(base, abs=1e-12)
    assert solve_band(prob, rule="random", rng=np.random.default_rng(4)).rates == pytest.approx(base, abs=1e-12)
    with pytest.raises(ValueError):
        solve_band(prob, rule="median")


def test_tied_gains_solve_cleanly():
    rates, sol, pi = solve_gains([2.0, 2.0, 2.0], [5.0, 5.0, 4.0], 1.0)
    assert sol.kkt_residual <= 1e-8
    assert (rates >= 0).all()


def test_solve_gains_returns_original_order():
    rates, _, pi = solve_gains([2.0, 1.0], [1.0, 3.0], 1.0)
    assert pi.tolist() == [1, 0]
    assert rates == pytest.approx([0.0, math.log(3)], abs=1e-15)


def test_consistency_error_carries_log():
    err = SolverConsistencyError("boom", {"q": [1.0]})
    assert err.log == {"q": [1.0]}


def test_nearly_tied_gains():
    # gains one ulp apart: not perturbed, yet the inactivity test must stay exact
    d0 = 0.01
    d1 = np.nextafter(d0, 1.0)
    prob = BandProblem.from_sorted([d0, d1], [0.0, 1.0], 0.1)
    sol = solve_band(prob)
    assert not sol.rates.any()
    assert sol.lambdas.min() >= 0


def test_loop_predicate_matches_literal_test():
    from multiband_sched.solver import _anchored_inactive

    rng = np.random.default_rng(21)
    checked = 0
    for _ in range(300):
        n = int(rng.integers(2, 8))
        prob = BandProblem.from_sorted(np.sort(rng.uniform(0.01, 10, n)), rng.uniform(0, 50, n), 1.0)
        sol = solve_band(prob)
        g, q = prob.inv_gain.tolist(), prob.q.tolist()
        inactive = set()
        for step in range(sol.iterations + 1):
            active = [k for k in range(n) if k not in inactive]
            lam = update_lagrange(active, inactive, prob)
            anchors = active + [n]
            for i, k in enumerate(active):
                p = anchors[i - 1] if i else -1
                literal = inactivity_test(k, lam, prob)
                assert _anchored_inactive(k, p, anchors[i + 1], g, q, prob.vn0) == literal
                checked += 1
            if step < sol.iterations:
                inactive.add(sol.removal_order[step])
    assert checked > 1000


@pytest.mark.parametrize(
    "gains, queues, vn0",
    [
        # tie copy perturbed above a distinct gain one ulp higher
        ([0.0531, 4.61694777455164, 4.61694777455164, 4.616947774551641, 4.616947778328862, 0.573, 0.459],
         [18.47, 0.0, 29.70, 0.0, 7.27, 20.33, 45.50], 0.1),
        ([0.32436272297868457, 0.32436272297868457, 0.3243627229786846, 0.32436272300260344, 2.0088930207457882],
         [34.2, 0.0, 0.0, 29.17, 41.3], 10.0),
    ],
)
def test_clustered_gains_certify(gains, queues, vn0):
    from multiband_sched.solver import decode_inverse_gains

    rates, sol, pi = solve_gains(gains, queues, vn0)
    assert sol.kkt_residual <= 1e-8 * max(queues)
    assert (rates >= 0).all()
    inv = decode_inverse_gains(sorted(gains))
    assert all(a > b for a, b in zip(inv, inv[1:]))
