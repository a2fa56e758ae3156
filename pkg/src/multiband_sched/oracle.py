"""Generic numerical solvers used to cross-check the exact band solver.

None of this touches the closed-form algebra of :mod:`.solver`: the oracle
only evaluates ``F`` and its derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import EnergyOverflowError
from .solver import BandProblem, _check_rates, _cumulative, gradient_f, objective_f


# relative rounding level tolerated in objective comparisons
ROUNDOFF = 1e-13


class OracleConvergenceError(RuntimeError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class OracleSettings:
    step_init: float = 1.0
    armijo_c: float = 1e-4
    shrink: float = 0.5
    grad_tol: float = 1e-10
    max_iters: int = 1_000_000

    def __post_init__(self):
        if not self.step_init > 0:
            raise ValueError("step_init must be positive")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


def _safe_objective(x, prob):
    try:
        return objective_f(x, prob)
    except EnergyOverflowError:
        return np.inf


def projected_gradient_norm(x, grad) -> float:
    return float(np.max(np.abs(x - np.maximum(x - grad, 0.0)), initial=0.0))


def oracle_solve(prob: BandProblem, settings: OracleSettings = OracleSettings(), trace=None) -> np.ndarray:
    """Projected gradient descent on ``F`` over the nonnegative orthant.

    Each step tries a Barzilai-Borwein length (``step_init`` on the first
    step) and backtracks along the projection arc until the Armijo condition
    holds, so ``F`` never increases by more than rounding. Once objective
    differences fall to rounding level, the derivative form of the Armijo
    test (approximate Armijo, Hager and Zhang) decides acceptance. Objective
    values are appended to ``trace`` when a list is given.
    """
    n = prob.n
    x = np.zeros(n)
    f = objective_f(x, prob)
    g = gradient_f(x, prob)
    step = settings.step_init
    if trace is not None:
        trace.append(f)
    resid = projected_gradient_norm(x, g)
    for _ in range(settings.max_iters):
        if resid <= settings.grad_tol:
            return x
        alpha = step
        while True:
            x_new = np.maximum(x - alpha * g, 0.0)
            f_new = _safe_objective(x_new, prob)
            slope = np.dot(g, x_new - x)
            if f_new <= f + settings.armijo_c * slope:
                break
            if f_new <= f + ROUNDOFF * abs(f) and slope < 0:
                # F differences are at rounding level here; use the derivative
                # form of the Armijo test instead
                g_try = gradient_f(x_new, prob)
                if np.dot(g_try, x_new - x) <= (2 * settings.armijo_c - 1) * slope:
                    break
            alpha *= settings.shrink
            if alpha < 1e-300:
                raise OracleConvergenceError("line search failed", resid)
        g_new = gradient_f(x_new, prob)
        s = x_new - x
        y = g_new - g
        sy = np.dot(s, y)
        step = float(np.clip(np.dot(s, s) / sy, 1e-12, 1e12)) if sy > 0 else settings.step_init
        if np.array_equal(x_new, x):
            # no representable progress left
            resid = projected_gradient_norm(x_new, g_new)
            if resid <= 1e3 * settings.grad_tol:
                return x_new
            raise OracleConvergenceError("stalled before reaching grad_tol", resid)
        x, f, g = x_new, f_new, g_new
        if trace is not None:
            trace.append(f)
        resid = projected_gradient_norm(x, g)
    if resid <= settings.grad_tol:
        return x
    raise OracleConvergenceError(f"no convergence in {settings.max_iters} iterations", resid)


def hessian_f(rates, prob: BandProblem) -> np.ndarray:
    """Second partials of ``F``.

    Entry ``(k, j)`` depends only on ``max(k, j)``:
    ``sum_{i>K} vn0 g_i (e^{R_i}-1) e^{S_{i-1}} + vn0 g_K e^{S_K}`` with
    ``K = max(k, j)`` and ``S`` the cumulative rates.
    """
    r = _check_rates(rates, prob)
    s = _cumulative(r)
    g = prob.inv_gain[:-1]
    later = prob.vn0 * g * np.expm1(r) * np.exp(s - r)
    suffix = np.concatenate([np.cumsum(later[::-1])[::-1][1:], [0.0]])
    t = suffix + prob.vn0 * g * np.exp(s)
    idx = np.arange(prob.n)
    return t[np.maximum.outer(idx, idx)]


def newton_refine(rates, prob: BandProblem, active_set, tol: float = 1e-12, max_iters: int = 100) -> np.ndarray:
    """Newton's method on the face where only ``active_set`` coordinates move."""
    x = np.array(rates, dtype=float)
    act = np.array(sorted(active_set), dtype=int)
    if act.size == 0:
        return x
    f = objective_f(x, prob)
    for _ in range(max_iters):
        grad = gradient_f(x, prob)[act]
        if np.max(np.abs(grad)) <= tol:
            break
        h = hessian_f(x, prob)[np.ix_(act, act)]
        try:
            np.linalg.cholesky(h)
            step = np.linalg.solve(h, -grad)
        except np.linalg.LinAlgError as exc:
            raise OracleConvergenceError(f"singular reduced Hessian: {exc}", float(np.max(np.abs(grad))))
        t = 1.0
        slope = float(np.dot(grad, step))
        while t > 1e-10:
            trial = x.copy()
            trial[act] += t * step
            f_trial = _safe_objective(trial, prob)
            if f_trial <= f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        if np.array_equal(trial, x):
            break
        x, f = trial, f_trial
    return x
