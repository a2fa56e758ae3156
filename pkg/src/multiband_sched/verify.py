"""Certification suites for the exact band solver.

Each suite draws random single-band instances from a fixed seed, checks one
property against its stated tolerance and returns a :class:`SuiteResult`
carrying the worst observed value. ``run_all`` backs the ``verify`` command.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .energy import energy_for_order, superposition_energies
from .oracle import hessian_f, newton_refine, oracle_solve
from .solver import (
    BandProblem, SolverSolution, closed_form_rates, gradient_f, kkt_check, objective_f, solve_band,
)

VN0_CHOICES = (0.1, 1.0, 10.0)
GAIN_RANGE = (0.01, 10.0)
QUEUE_MAX = 50.0

ORACLE_F_ABS, ORACLE_F_REL, ORACLE_RATE_GAP = 1e-8, 1e-6, 1e-4
NEWTON_RATE_GAP = 1e-9
STAT_TOL, SIGN_TOL = 1e-8, 1e-12
MONOTONE_TOL = 1e-12
SELECTION_TOL = 1e-10
ORDER_TIE_TOL = 1e-12
GRAD_REL_TOL, HESS_REL_TOL, HESS_SYM_TOL = 1e-6, 1e-5, 1e-12


@dataclass
class SuiteResult:
    name: str
    instances: int = 0
    failures: int = 0
    worst: dict = field(default_factory=dict)
    first_failure: str | None = None

    @property
    def passed(self) -> bool:
        return self.instances > 0 and self.failures == 0

    def record(self, key, value, larger_is_worse=True):
        old = self.worst.get(key)
        if old is None or (value > old if larger_is_worse else value < old):
            self.worst[key] = float(value)

    def fail(self, msg):
        self.failures += 1
        if self.first_failure is None:
            self.first_failure = msg

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        worst = ", ".join(f"{k}={v:.3g}" for k, v in self.worst.items())
        return f"[{status}] {self.name}: {self.instances} instances, {self.failures} failures; worst {worst}"


def random_gains(rng, n, lo=GAIN_RANGE[0], hi=GAIN_RANGE[1]) -> np.ndarray:
    """Distinct gains, log-uniform on ``[lo, hi]``, sorted increasing."""
    while True:
        d = np.sort(np.exp(rng.uniform(np.log(lo), np.log(hi), n)))
        if n < 2 or np.all(np.diff(d) > 0):
            return d


def random_instance(rng, n_max=8, n_min=1) -> BandProblem:
    n = int(rng.integers(n_min, n_max + 1))
    d = random_gains(rng, n)
    q = rng.uniform(0.0, QUEUE_MAX, n)
    return BandProblem.from_sorted(d, q, float(rng.choice(VN0_CHOICES)))


def instances(count, seed, n_max=8):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    for _ in range(count):
        yield random_instance(rng, n_max)


def _rng(seed, tag):
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


def sign_flipped_solver(prob, **kwargs) -> SolverSolution:
    """Deliberately broken solver for negative-control runs: multipliers enter with the wrong sign."""
    sol = solve_band(prob, **kwargs)
    flipped = -sol.lambdas
    rates, _ = closed_form_rates(flipped, prob)
    rates = np.nan_to_num(rates, nan=0.0)
    return SolverSolution(
        rates=rates, lambdas=flipped, active=sol.active, inactive=sol.inactive,
        iterations=sol.iterations, lambda_history=-sol.lambda_history, kkt_residual=np.inf,
    )


# -- suites ---------------------------------------------------------------------


def suite_oracle_equivalence(count, seed=0, solver=solve_band) -> SuiteResult:
    res = SuiteResult("oracle-equivalence")
    for i, prob in enumerate(instances(count, seed)):
        res.instances += 1
        sol = solver(prob)
        exact = objective_f(sol.rates, prob)
        x = oracle_solve(prob)
        approx = objective_f(x, prob)
        f_gap = abs(exact - approx)
        allowed = ORACLE_F_ABS + ORACLE_F_REL * abs(exact)
        r_gap = float(np.max(np.abs(x - sol.rates)))
        res.record("F_gap_over_tol", f_gap / allowed)
        res.record("rate_gap", r_gap)
        if not (f_gap <= allowed and r_gap <= ORACLE_RATE_GAP):
            res.fail(f"instance {i}: |dF|={f_gap:.3g} (allowed {allowed:.3g}), rate gap {r_gap:.3g}")
    return res


def suite_newton(count, seed=0, solver=solve_band) -> SuiteResult:
    res = SuiteResult("newton-agreement")
    for i, prob in enumerate(instances(count, seed)):
        res.instances += 1
        sol = solver(prob)
        polished = newton_refine(sol.rates, prob, sol.active)
        from_oracle = newton_refine(oracle_solve(prob), prob, sol.active)
        move = float(np.max(np.abs(polished - sol.rates)))
        gap = float(np.max(np.abs(from_oracle - sol.rates)))
        res.record("fixed_point_move", move)
        res.record("oracle_newton_gap", gap)
        if move > 1e-10 or gap > NEWTON_RATE_GAP:
            res.fail(f"instance {i}: move {move:.3g}, gap {gap:.3g}")
    return res


def suite_kkt(count, seed=0, solver=solve_band) -> SuiteResult:
    res = SuiteResult("kkt-certificate")
    for i, prob in enumerate(instances(count, seed)):
        res.instances += 1
        sol = solver(prob)
        rep = kkt_check(sol.rates, sol.lambdas, prob)
        res.record("stationarity", rep.stationarity)
        res.record("min_rate", rep.min_rate, larger_is_worse=False)
        res.record("min_lambda", rep.min_lambda, larger_is_worse=False)
        res.record("complementarity", rep.complementarity)
        if not (rep.ok(STAT_TOL, SIGN_TOL) and rep.min_rate >= 0):
            res.fail(f"instance {i}: {rep}")
    return res


def suite_lambda_monotonicity(count, seed=0, solver=solve_band) -> SuiteResult:
    res = SuiteResult("lambda-monotonicity")
    for i, prob in enumerate(instances(count, seed)):
        res.instances += 1
        sol = solver(prob)
        hist = sol.lambda_history
        drop = float(-np.min(np.diff(hist, axis=0))) if hist.shape[0] > 1 else 0.0
        res.record("max_decrease", max(drop, 0.0) + 0.0)
        res.record("min_final_lambda", float(sol.lambdas.min()), larger_is_worse=False)
        if drop > MONOTONE_TOL or sol.lambdas.min() < -MONOTONE_TOL:
            res.fail(f"instance {i}: decrease {drop:.3g}, min lambda {sol.lambdas.min():.3g}")
    return res


def suite_selection_order(count, seed=0, solver=solve_band) -> SuiteResult:
    res = SuiteResult("selection-order-independence")
    for i, prob in enumerate(instances(count, seed)):
        res.instances += 1
        base = solver(prob, rule="smallest").rates
        others = [
            solver(prob, rule="largest").rates,
            solver(prob, rule="random", rng=np.random.default_rng([seed, i])).rates,
        ]
        gap = max(float(np.max(np.abs(o - base))) for o in others)
        res.record("rate_gap", gap)
        if gap > SELECTION_TOL:
            res.fail(f"instance {i}: selection rules disagree by {gap:.3g}")
    return res


def suite_objective_sign(count, seed=0, solver=solve_band) -> SuiteResult:
    res = SuiteResult("objective-nonpositive")
    for i, prob in enumerate(instances(count, seed)):
        res.instances += 1
        f = objective_f(solver(prob).rates, prob)
        res.record("max_F", f)
        if f > 0:
            res.fail(f"instance {i}: F(R*) = {f:.3g} > 0")
    return res


def suite_decode_order(count, seed=0) -> SuiteResult:
    """Increasing-gain decoding vs every other order, N <= 5."""
    res = SuiteResult("decode-order-optimality")
    rng = _rng(seed, 5)
    for i in range(count):
        res.instances += 1
        n = int(rng.integers(1, 6))
        gains = rng.permutation(random_gains(rng, n))
        rates = rng.uniform(0.0, 2.0, n)
        n0 = float(rng.uniform(0.1, 2.0))
        best = superposition_energies(gains, rates, n0).total
        worst_other = min(energy_for_order(gains, rates, p, n0).total for p in itertools.permutations(range(n)))
        excess = (best - worst_other) / max(1.0, worst_other)
        res.record("relative_excess", excess)
        if excess > ORDER_TIE_TOL:
            res.fail(f"instance {i}: sorted order exceeds minimum by {excess:.3g} (relative)")
    return res


def _central_diff(fun, x, h):
    out = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.array(out)


def suite_gradient(count, seed=0) -> SuiteResult:
    res = SuiteResult("gradient-vs-finite-differences")
    rng = _rng(seed, 6)
    for i in range(count):
        res.instances += 1
        prob = random_instance(rng)
        x = rng.uniform(0.0, 2.0, prob.n) + 1e-3
        g = gradient_f(x, prob)
        fd = _central_diff(lambda y: objective_f(y, prob), x, 1e-5)
        err = float(np.max(np.abs(fd - g)) / max(1.0, np.max(np.abs(g))))
        res.record("relative_error", err)
        if err > GRAD_REL_TOL:
            res.fail(f"instance {i}: gradient relative error {err:.3g}")
    return res


def suite_hessian(count, seed=0) -> SuiteResult:
    res = SuiteResult("hessian-symmetric-positive-definite")
    rng = _rng(seed, 7)
    for i in range(count):
        res.instances += 1
        prob = random_instance(rng, n_max=6)
        x = rng.uniform(0.0, 2.0, prob.n)
        h = hessian_f(x, prob)
        asym = float(np.max(np.abs(h - h.T)))
        eig_min = float(np.linalg.eigvalsh(h).min())
        fd = _central_diff(lambda y: gradient_f(y, prob), x + 1e-3, 1e-6).T
        href = hessian_f(x + 1e-3, prob)
        err = float(np.max(np.abs(fd - href)) / max(1.0, np.max(np.abs(href))))
        res.record("asymmetry", asym)
        res.record("min_eigenvalue", eig_min, larger_is_worse=False)
        res.record("fd_relative_error", err)
        if asym > HESS_SYM_TOL or not eig_min > 0 or err > HESS_REL_TOL:
            res.fail(f"instance {i}: asym {asym:.3g}, min eig {eig_min:.3g}, fd err {err:.3g}")
    return res


def run_all(count, seed=0, solver=solve_band):
    return [
        suite_oracle_equivalence(count, seed, solver),
        suite_newton(count, seed, solver),
        suite_kkt(count, seed, solver),
        suite_lambda_monotonicity(count, seed, solver),
        suite_selection_order(count, seed, solver),
        suite_objective_sign(count, seed, solver),
        suite_decode_order(count, seed),
        suite_gradient(count, seed),
        suite_hessian(count, seed),
    ]


# -- complexity -------------------------------------------------------------------


def complexity_fit(sizes=(8, 16, 32, 64, 128, 256, 512), seed=0, repeats=3):
    """Log-log slope of single-band solve time against N.

    Returns ``(exponent, times, iterations)``; each time is the best of
    ``repeats`` runs on the same instance.
    """
    rng = _rng(seed, 8)
    times, iters = [], []
    for n in sizes:
        d = random_gains(rng, n)
        q = rng.uniform(0.0, QUEUE_MAX, n)
        prob = BandProblem.from_sorted(d, q, 1.0)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            sol = solve_band(prob, check=False)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
        iters.append(sol.iterations)
    slope = float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
    return slope, times, iters
