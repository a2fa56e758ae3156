"""Exact active-set solver for the single-band rate allocation problem.

For one band with users sorted by increasing gain, the scheduler minimises

    F(R) = sum_k vn0 / d_k * (exp(R_k) - 1) * exp(sum_{i<k} R_i) - sum_k Q_k R_k

over ``R >= 0``. ``F`` is strictly convex on the orthant, so the KKT point is
the unique optimum. The solver starts with every user active and repeatedly
moves to the inactive set any active user whose closed-form stationary rate
would be negative, recomputing the multipliers of all inactive users each
time. At most N users move and each move costs O(N), hence O(N^2) overall.

All arrays handed to this module are in *decode order*: position 0 is the
weakest user. Position ``N`` is a virtual user with infinite gain (inverse
gain 0) and zero queue/multiplier that closes the recursions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import MAX_EXPONENT, EnergyOverflowError, decode_order, perturb_ties
from .model import ConfigurationError

STATIONARITY_TOL = 1e-8
SIGN_TOL = 1e-12
SELECTION_RULES = ("smallest", "largest", "random")


class SolverConsistencyError(RuntimeError):
    """The exact solver produced a point that fails its own certificate."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log or {}


@dataclass(frozen=True)
class BandProblem:
    inv_gain: np.ndarray
    q: np.ndarray
    vn0: float

    def __post_init__(self):
        g = np.asarray(self.inv_gain, dtype=float)
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "inv_gain", g)
        object.__setattr__(self, "q", q)
        if g.ndim != 1 or g.shape != q.shape or g.size < 2:
            raise ConfigurationError(
                f"inv_gain and q must be 1-D of equal length N+1 >= 2, got {g.shape}, {q.shape}"
            )
        if g[-1] != 0 or q[-1] != 0:
            raise ConfigurationError("virtual user N+1 must have inv_gain = 0 and q = 0")
        if not np.all(np.isfinite(g)) or not np.all(np.isfinite(q)):
            raise ConfigurationError("band problem entries must be finite")
        if np.any(np.diff(g) >= 0):
            raise ConfigurationError("inv_gain must be strictly decreasing (gains sorted and distinct)")
        if np.any(q < 0):
            raise ConfigurationError("queue weights must be nonnegative")
        if not (math.isfinite(self.vn0) and self.vn0 > 0):
            raise ConfigurationError(f"vn0 must be positive, got {self.vn0!r}")

    @classmethod
    def _trusted(cls, inv_gain, q, vn0):
        # skips validation; callers guarantee the invariants
        obj = object.__new__(cls)
        object.__setattr__(obj, "inv_gain", inv_gain)
        object.__setattr__(obj, "q", q)
        object.__setattr__(obj, "vn0", vn0)
        return obj

    @property
    def n(self) -> int:
        return self.inv_gain.size - 1

    @classmethod
    def from_sorted(cls, gains, queues, vn0: float) -> "BandProblem":
        """Build from gains already in nondecreasing, distinct order."""
        gains = np.asarray(gains, dtype=float)
        queues = np.asarray(queues, dtype=float)
        if np.any(gains <= 0):
            raise ConfigurationError("gains must be positive")
        return cls(np.append(1.0 / gains, 0.0), np.append(queues, 0.0), float(vn0))

    @classmethod
    def from_band(cls, gains, queues, vn0: float):
        """Sort one band's users into decode order.

        Returns ``(problem, pi)`` where ``pi[k]`` is the original index of the
        user at decode position ``k``. Exact gain ties are perturbed first.
        """
        pi = decode_order(gains).pi
        perturbed = perturb_ties(gains)
        queues = np.asarray(queues, dtype=float)
        if queues.shape != perturbed.shape:
            raise ConfigurationError(f"queues shape {queues.shape} != gains shape {perturbed.shape}")
        inv = decode_inverse_gains(perturbed[pi].tolist())
        return cls(np.array(inv), np.append(queues[pi], 0.0), float(vn0)), pi


@dataclass
class SolverSolution:
    rates: np.ndarray
    lambdas: np.ndarray
    active: tuple
    inactive: tuple
    iterations: int
    lambda_history: np.ndarray
    """Row ``i`` holds the multipliers after iteration ``i`` (row 0 is all zero)."""
    kkt_residual: float
    removal_order: tuple = field(default=())


def decode_inverse_gains(sorted_gains):
    """Inverse gains in decode order, strictly decreasing, virtual 0 appended.

    Tie perturbation can lift a tied copy past a distinct gain less than
    1e-9 above it, and ``1/d`` can round neighbouring gains to one value;
    either way the entry is pulled one ulp below its predecessor.
    """
    inv = [1.0 / d for d in sorted_gains]
    for k in range(1, len(inv)):
        if inv[k] >= inv[k - 1]:
            inv[k] = math.nextafter(inv[k - 1], 0.0)
    inv.append(0.0)
    return inv


# -- objective and derivatives ------------------------------------------------


def _cumulative(rates: np.ndarray) -> np.ndarray:
    s = np.cumsum(rates)
    if s.size and s[-1] > MAX_EXPONENT:
        raise EnergyOverflowError(f"cumulative rate exponent {s[-1]:.6g} exceeds {MAX_EXPONENT:g}")
    return s


def _check_rates(rates, prob: BandProblem) -> np.ndarray:
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (prob.n,):
        raise ConfigurationError(f"rates shape {rates.shape} does not match N = {prob.n}")
    return rates


def objective_f(rates, prob: BandProblem) -> float:
    r = _check_rates(rates, prob)
    s = _cumulative(r)
    g = prob.inv_gain[:-1]
    energy = prob.vn0 * g * np.expm1(r) * np.exp(s - r)
    return float(energy.sum() - np.dot(prob.q[:-1], r))


def gradient_f(rates, prob: BandProblem) -> np.ndarray:
    """Partial derivatives of ``F``; O(N) via a suffix sum of the later users' energies."""
    r = _check_rates(rates, prob)
    s = _cumulative(r)
    g = prob.inv_gain[:-1]
    later = prob.vn0 * g * np.expm1(r) * np.exp(s - r)
    # suffix[k] = sum_{i>k} later[i]
    suffix = np.concatenate([np.cumsum(later[::-1])[::-1][1:], [0.0]])
    return suffix + prob.vn0 * g * np.exp(s) - prob.q[:-1]


def lagrangian_gradient(rates, lambdas, prob: BandProblem) -> np.ndarray:
    return gradient_f(rates, prob) - np.asarray(lambdas, dtype=float)


# -- closed forms ---------------------------------------------------------------


def _weights(q, lam):
    return [qi + li for qi, li in zip(q, lam)]


def closed_form_rates(lambdas, prob: BandProblem):
    """Stationary rates for given multipliers, one user at a time.

    Returns ``(rates, valid)``. Where a log argument is not positive the
    stationary point does not exist for that user; ``rates`` holds NaN there
    and ``valid`` is False. Negative entries are returned as is.
    """
    n = prob.n
    lam = np.zeros(n + 1)
    lam[:n] = np.asarray(lambdas, dtype=float)
    g = prob.inv_gain.tolist()
    w = _weights(prob.q.tolist(), lam.tolist())
    rates = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    for k in range(n):
        ratio = _rate_ratio(k, g, w, prob.vn0)
        if ratio > 0:
            rates[k] = math.log(ratio)
            valid[k] = True
    return rates, valid


def _rate_ratio(k, g, w, vn0):
    if k == 0:
        return (w[0] - w[1]) / (vn0 * (g[0] - g[1]))
    num = (w[k] - w[k + 1]) * (g[k - 1] - g[k])
    den = (w[k - 1] - w[k]) * (g[k] - g[k + 1])
    if den <= 0:
        return math.nan if num == 0 else -1.0
    return num / den


def _passes_inactivity(k, g, w, q, vn0):
    if k == 0:
        return q[0] < vn0 * (g[0] - g[1]) + w[1]
    # weighted chord of the neighbours' composite weights, cleared of its positive denominator
    return q[k] * (g[k - 1] - g[k + 1]) < w[k - 1] * (g[k] - g[k + 1]) + w[k + 1] * (g[k - 1] - g[k])


def _anchored_inactive(k, p, u, g, q, vn0):
    # The inactivity test with the current multipliers substituted in: every
    # inactive run has composite weights on the chord between its active
    # neighbours (or on the energy-price line below the first active user),
    # so the test only involves k, its active neighbours p and u, and raw
    # data differences. Same predicate as _passes_inactivity in exact
    # arithmetic, without cancellation when gains nearly coincide.
    if p < 0:
        return q[k] - q[u] < vn0 * (g[k] - g[u])
    return (q[k] - q[u]) * (g[p] - g[k]) < (q[p] - q[k]) * (g[k] - g[u])


def inactivity_test(k: int, lambdas, prob: BandProblem) -> bool:
    """True when active user ``k`` (decode position) should become inactive."""
    n = prob.n
    if not 0 <= k < n:
        raise IndexError(f"user position {k} out of range 0..{n - 1}")
    lam = list(np.asarray(lambdas, dtype=float)) + [0.0]
    q = prob.q.tolist()
    return _passes_inactivity(k, prob.inv_gain.tolist(), _weights(q, lam), q, prob.vn0)


def _lagrange(active, g, q, vn0, n):
    lam = [0.0] * (n + 1)
    k = 0
    while k < n:
        if active[k]:
            k += 1
            continue
        start = k
        while k < n and not active[k]:
            k += 1
        u = k  # first active user above the run; may be the virtual user n
        if start == 0:
            for m in range(start, u):
                lam[m] = vn0 * (g[m] - g[u]) + q[u] - q[m]
        else:
            v = start - 1
            span = g[v] - g[u]
            for m in range(start, u):
                lam[m] = (q[v] * (g[m] - g[u]) + q[u] * (g[v] - g[m])) / span - q[m]
    return lam


def update_lagrange(active, inactive, prob: BandProblem) -> np.ndarray:
    """Multipliers for a given active/inactive split, recomputed from scratch.

    Each maximal run of inactive users gets multipliers that pin its rates to
    zero: a leading run (starting at position 0) is anchored on the energy
    price and the first active user above it; an interior run is anchored on
    the active users on both sides, the virtual user counting as active.
    """
    n = prob.n
    mask = [False] * n
    for k in active:
        mask[k] = True
    if sorted(list(active) + list(inactive)) != list(range(n)):
        raise ConfigurationError("active and inactive must partition 0..N-1")
    lam = _lagrange(mask + [True], prob.inv_gain.tolist(), prob.q.tolist(), prob.vn0, n)
    return np.array(lam[:n])


# -- certificate ----------------------------------------------------------------


@dataclass(frozen=True)
class KKTReport:
    stationarity: float
    """max_k |dL/dR_k|"""
    min_rate: float
    min_lambda: float
    complementarity: float
    """max_k |R_k * lambda_k|"""

    def ok(self, stat_tol=STATIONARITY_TOL, sign_tol=SIGN_TOL) -> bool:
        return (
            self.stationarity <= stat_tol
            and self.min_rate >= -sign_tol
            and self.min_lambda >= -sign_tol
            and self.complementarity <= sign_tol
        )


def kkt_check(rates, lambdas, prob: BandProblem) -> KKTReport:
    rates = _check_rates(rates, prob)
    lambdas = np.asarray(lambdas, dtype=float)
    stat = lagrangian_gradient(rates, lambdas, prob)
    return KKTReport(
        stationarity=float(np.max(np.abs(stat))),
        min_rate=float(rates.min()),
        min_lambda=float(lambdas.min()),
        complementarity=float(np.max(np.abs(rates * lambdas))),
    )


def _stationarity(rates, lam, g, q, vn0, n):
    # pure-Python twin of lagrangian_gradient for the hot path
    s = 0.0
    cum = []
    for r in rates:
        s += r
        cum.append(s)
    if s > MAX_EXPONENT:
        raise EnergyOverflowError(f"cumulative rate exponent {s:.6g} exceeds {MAX_EXPONENT:g}")
    worst = 0.0
    suffix = 0.0
    for k in range(n - 1, -1, -1):
        ek = math.exp(cum[k])
        resid = suffix + vn0 * g[k] * ek - q[k] - lam[k]
        worst = max(worst, abs(resid))
        suffix += vn0 * g[k] * math.expm1(rates[k]) * math.exp(cum[k] - rates[k])
    return worst


# -- solver ---------------------------------------------------------------------


def solve_band(prob: BandProblem, rule: str = "smallest", rng=None, check: bool = True) -> SolverSolution:
    """Exact minimiser of ``F`` over ``R >= 0`` for one band.

    ``rule`` picks among several users eligible for deactivation in the same
    iteration: ``"smallest"`` / ``"largest"`` decode position, or
    ``"random"`` (drawn from ``rng``, a ``numpy.random.Generator``). The
    optimum does not depend on the choice.

    With ``check`` set, the result is certified (multiplier signs, monotone
    multiplier history, stationarity) and :class:`SolverConsistencyError` is
    raised with the iteration log on failure.
    """
    if rule not in SELECTION_RULES:
        raise ValueError(f"unknown selection rule {rule!r}; expected one of {SELECTION_RULES}")
    if rule == "random" and rng is None:
        rng = np.random.default_rng(0)
    n = prob.n
    g = prob.inv_gain.tolist()
    q = prob.q.tolist()
    vn0 = prob.vn0

    if not any(q[:n]):
        return _all_inactive(prob)

    active = [True] * n + [True]
    # neighbouring active users; -1 = none below, n = virtual user above
    prev = list(range(-1, n))
    nxt = list(range(1, n + 1))
    lam = [0.0] * (n + 1)
    history = [lam[:n]]
    removed = []
    while True:
        order = range(n - 1, -1, -1) if rule == "largest" else range(n)
        if rule == "random":
            eligible = [k for k in order if active[k] and _anchored_inactive(k, prev[k], nxt[k], g, q, vn0)]
            if not eligible:
                break
            k = eligible[int(rng.integers(len(eligible)))]
        else:
            k = next((k for k in order if active[k] and _anchored_inactive(k, prev[k], nxt[k], g, q, vn0)), None)
            if k is None:
                break
        active[k] = False
        removed.append(k)
        if prev[k] >= 0:
            nxt[prev[k]] = nxt[k]
        prev[nxt[k]] = prev[k]
        lam = _lagrange(active, g, q, vn0, n)
        history.append(lam[:n])

    rates = _anchored_rates(active, g, q, vn0, n)
    if rates is None:
        raise SolverConsistencyError("an active user has no stationary rate", _log(prob, history, removed, []))

    scale = max(1.0, max(q), vn0 * g[0])
    low = min(rates)
    if low < 0:
        if check and low < -SIGN_TOL * scale:
            raise SolverConsistencyError(f"negative rate {low!r} at termination", _log(prob, history, removed, rates))
        # rounding noise of a rate that is exactly zero at the optimum
        rates = [max(r, 0.0) for r in rates]

    resid = _stationarity(rates, lam, g, q, vn0, n)
    if check:
        _certify(prob, history, removed, rates, lam, resid, scale)

    act = tuple(k for k in range(n) if active[k])
    return SolverSolution(
        rates=np.array(rates),
        lambdas=np.array(lam[:n]),
        active=act,
        inactive=tuple(sorted(removed)),
        iterations=len(removed),
        lambda_history=np.array(history),
        kkt_residual=resid,
        removal_order=tuple(removed),
    )


def _anchored_rates(active, g, q, vn0, n):
    # Stationary rates of the active users with the inactive multipliers
    # substituted in: the cumulative exponent of an active user k depends only
    # on the next active user u (possibly the virtual one). Same values as the
    # per-user closed form, without subtracting nearly equal composite weights.
    rates = [0.0] * n
    anchors = [k for k in range(n) if active[k]] + [n]
    prev = 0.0
    for k, u in zip(anchors, anchors[1:]):
        arg = (q[k] - q[u]) / (vn0 * (g[k] - g[u]))
        if not arg > 0:
            return None
        s = math.log(arg)
        rates[k] = s - prev
        prev = s
    return rates


def _all_inactive(prob: BandProblem) -> SolverSolution:
    n = prob.n
    lam = _lagrange([False] * n + [True], prob.inv_gain.tolist(), prob.q.tolist(), prob.vn0, n)[:n]
    return SolverSolution(
        rates=np.zeros(n), lambdas=np.array(lam), active=(), inactive=tuple(range(n)),
        iterations=0, lambda_history=np.zeros((1, n)), kkt_residual=0.0,
    )


def _log(prob, history, removed, rates):
    return {
        "inv_gain": prob.inv_gain.tolist(),
        "q": prob.q.tolist(),
        "vn0": prob.vn0,
        "removal_order": list(removed),
        "lambda_history": [list(h) for h in history],
        "rates": list(rates),
    }


def _certify(prob, history, removed, rates, lam, resid, scale):
    tol = SIGN_TOL * scale
    if min(lam) < -tol:
        raise SolverConsistencyError(f"negative multiplier {min(lam)!r}", _log(prob, history, removed, rates))
    for i in range(1, len(history)):
        drop = min(b - a for a, b in zip(history[i - 1], history[i]))
        if drop < -tol:
            raise SolverConsistencyError(
                f"multiplier decreased by {-drop!r} at iteration {i}", _log(prob, history, removed, rates)
            )
    if resid > STATIONARITY_TOL * scale:
        raise SolverConsistencyError(
            f"stationarity residual {resid!r} above tolerance", _log(prob, history, removed, rates)
        )


def solve_gains(gains, queues, vn0: float, **kwargs):
    """Solve one band given gains and queues in original user order.

    Returns ``(rates, solution, pi)`` with ``rates`` in original order.
    """
    prob, pi = BandProblem.from_band(gains, queues, vn0)
    sol = solve_band(prob, **kwargs)
    rates = np.empty(prob.n)
    rates[pi] = sol.rates
    return rates, sol, pi
