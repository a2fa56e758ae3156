"""Slotted closed-loop simulation of the back-pressure power-minimising policy.

Each slot: observe the channel gains, solve every band independently for
the queue-weighted rate allocation, realise the rates with superposition
coding (energies from the successive-decoding formula), then apply the queue
update with that slot's arrivals and advance the fading chains.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .energy import _energies_in_order, sorted_band
from .model import ConfigurationError, SystemConfig, as_gain_matrix, as_queue_vector, queue_update
from .solver import BandProblem, SolverConsistencyError, decode_inverse_gains, solve_band

log = logging.getLogger(__name__)

ARRIVAL_KINDS = ("deterministic", "bernoulli_bulk", "poisson", "discretized_exponential")
STREAMS = {"channel": 1, "arrivals": 2}
STABILITY_EPS = 0.01
STABILITY_WINDOWS = 50
MIN_STABILITY_HORIZON = 1000
THREADS_ENV = "MULTIBAND_SCHED_THREADS"


@dataclass(frozen=True)
class MarkovChain:
    states: np.ndarray
    """Gain value of each state."""
    transition: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        p = np.asarray(self.transition, dtype=float)
        init = np.asarray(self.initial, dtype=float)
        s = states.size
        if states.ndim != 1 or s == 0:
            raise ConfigurationError("chain states must be a nonempty list of gains")
        if np.any(~np.isfinite(states) | (states <= 0)):
            raise ConfigurationError("chain state gains must be positive and finite")
        if p.shape != (s, s):
            raise ConfigurationError(f"transition matrix must be {s}x{s}, got {p.shape}")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1) > 1e-12):
            raise ConfigurationError("transition rows must be nonnegative and sum to 1")
        if init.shape != (s,) or np.any(init < 0) or abs(init.sum() - 1) > 1e-12:
            raise ConfigurationError("initial distribution must be a probability vector over the states")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "_cum", np.cumsum(p, axis=1))
        object.__setattr__(self, "_init_cum", np.cumsum(init))

    def stationary(self) -> np.ndarray:
        w, v = np.linalg.eig(self.transition.T)
        pi = np.real(v[:, np.argmin(np.abs(w - 1))])
        return pi / pi.sum()


@dataclass(frozen=True)
class MarkovChannelModel:
    """Independent finite-state chain for every (user, band) pair."""

    chains: tuple

    def __post_init__(self):
        chains = tuple(tuple(row) for row in self.chains)
        if not chains or not chains[0] or len({len(r) for r in chains}) != 1:
            raise ConfigurationError("channel chains must form a nonempty N x M grid")
        object.__setattr__(self, "chains", chains)

    @classmethod
    def uniform(cls, chain: MarkovChain, n_users: int, n_bands: int) -> "MarkovChannelModel":
        return cls(tuple(tuple(chain for _ in range(n_bands)) for _ in range(n_users)))

    @property
    def shape(self):
        return len(self.chains), len(self.chains[0])

    def initial_state(self, rng) -> np.ndarray:
        n, m = self.shape
        u = rng.random((n, m))
        state = np.empty((n, m), dtype=int)
        for k in range(n):
            for b in range(m):
                c = self.chains[k][b]
                state[k, b] = min(int(np.searchsorted(c._init_cum, u[k, b], side="right")), c.states.size - 1)
        return state

    def gains(self, state) -> np.ndarray:
        n, m = self.shape
        return np.array([[self.chains[k][b].states[state[k, b]] for b in range(m)] for k in range(n)])


def step_channel(model: MarkovChannelModel, state, rng) -> np.ndarray:
    """Advance every chain one step; consumes one uniform draw per chain."""
    n, m = model.shape
    u = rng.random((n, m))
    nxt = np.empty((n, m), dtype=int)
    for k in range(n):
        for b in range(m):
            c = model.chains[k][b]
            s = int(np.searchsorted(c._cum[state[k, b]], u[k, b], side="right"))
            nxt[k, b] = min(s, c.states.size - 1)
    return nxt


@dataclass(frozen=True)
class ArrivalModel:
    kind: str
    mean: np.ndarray
    size: np.ndarray | None = None
    """Bulk size for ``bernoulli_bulk``; each slot brings ``size`` w.p. ``mean/size``."""

    def __post_init__(self):
        if self.kind not in ARRIVAL_KINDS:
            raise ConfigurationError(f"unknown arrival kind {self.kind!r}; expected one of {ARRIVAL_KINDS}")
        mean = np.asarray(self.mean, dtype=float)
        if mean.ndim != 1 or np.any(~np.isfinite(mean)) or np.any(mean < 0):
            raise ConfigurationError("arrival means must be a vector of finite nonnegative numbers")
        object.__setattr__(self, "mean", mean)
        if self.kind == "bernoulli_bulk":
            if self.size is None:
                raise ConfigurationError("bernoulli_bulk arrivals need a bulk size")
            size = np.broadcast_to(np.asarray(self.size, dtype=float), mean.shape).copy()
            if np.any(size <= 0) or np.any(mean > size):
                raise ConfigurationError("bernoulli_bulk needs size > 0 and mean <= size")
            object.__setattr__(self, "size", size)

    @classmethod
    def bernoulli_bulk(cls, p, size, n_users: int) -> "ArrivalModel":
        p = np.broadcast_to(np.asarray(p, dtype=float), (n_users,))
        size = np.broadcast_to(np.asarray(size, dtype=float), (n_users,))
        return cls("bernoulli_bulk", p * size, size)

    @property
    def n_users(self) -> int:
        return self.mean.size


def sample_arrivals(model: ArrivalModel, rng) -> np.ndarray:
    n = model.n_users
    if model.kind == "deterministic":
        return model.mean.copy()
    if model.kind == "bernoulli_bulk":
        return np.where(rng.random(n) < model.mean / model.size, model.size, 0.0)
    if model.kind == "poisson":
        return rng.poisson(model.mean).astype(float)
    # geometric on {0, 1, ...}: the lattice version of an exponential with the same mean
    return (rng.geometric(1.0 / (1.0 + model.mean)) - 1).astype(float)


@dataclass(frozen=True)
class Scenario:
    system: SystemConfig
    channel: MarkovChannelModel
    arrivals: ArrivalModel
    horizon: int
    burn_in_fraction: float = 0.1
    seed: int = 0
    initial_queue: np.ndarray | None = None

    def __post_init__(self):
        n, m = self.system.n_users, self.system.n_bands
        if self.channel.shape != (n, m):
            raise ConfigurationError(f"channel grid {self.channel.shape} does not match ({n}, {m})")
        if self.arrivals.n_users != n:
            raise ConfigurationError(f"arrival model has {self.arrivals.n_users} users, expected {n}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigurationError("horizon must be a positive integer")
        if not 0 <= self.burn_in_fraction < 1:
            raise ConfigurationError("burn_in_fraction must lie in [0, 1)")
        q0 = np.zeros(n) if self.initial_queue is None else as_queue_vector(self.initial_queue, n)
        object.__setattr__(self, "initial_queue", q0)

    @property
    def burn_in(self) -> int:
        return int(self.burn_in_fraction * self.horizon)

    def with_overrides(self, **changes) -> "Scenario":
        """Copy with selected fields replaced; ``v_param`` reaches into the system config."""
        if "v_param" in changes:
            changes["system"] = replace(self.system, v_param=changes.pop("v_param"))
        return replace(self, **changes)


def rng_stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), STREAMS[name]]))


@dataclass
class PolicyDecision:
    rates: np.ndarray
    energies: np.ndarray
    """Per-symbol energies, same layout as ``rates``."""
    solutions: list = field(default_factory=list)


def schedule_slot(cfg: SystemConfig, q, d, keep_solutions: bool = False) -> PolicyDecision:
    """One slot of the policy: an independent exact solve on every band."""
    q = as_queue_vector(q, cfg.n_users)
    d = as_gain_matrix(d, cfg.n_users, cfg.n_bands)
    rates = np.zeros_like(d)
    energies = np.zeros_like(d)
    sols = []
    if not q.any():
        return PolicyDecision(rates, energies, sols)
    n, vn0, n0 = cfg.n_users, cfg.vn0, cfg.noise_psd
    if not vn0 > 0:
        raise ConfigurationError("the policy needs V * N0 > 0")
    qs = q.tolist()
    for m in range(cfg.n_bands):
        col = d[:, m].tolist()
        perturbed, pi = sorted_band(col)
        prob = BandProblem._trusted(
            np.array(decode_inverse_gains([perturbed[k] for k in pi])),
            np.array([qs[k] for k in pi] + [0.0]),
            vn0,
        )
        sol = solve_band(prob)
        band = [0.0] * n
        for pos, k in enumerate(pi):
            band[k] = float(sol.rates[pos]) if qs[k] > 0 else 0.0
        rates[:, m] = band
        energies[:, m] = _energies_in_order(col, band, pi, n0)
        if keep_solutions:
            sols.append(sol)
    return PolicyDecision(rates, energies, sols)


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    slope: float
    max_mean_queue: float
    threshold: float


@dataclass(frozen=True)
class Summary:
    horizon: int
    burn_in: int
    power_efficiency: float
    throughput: list
    mean_queue: list
    mean_total_queue: float
    max_queue: float
    stability: StabilityReport | None

    def to_dict(self) -> dict:
        out = {
            "horizon": self.horizon,
            "burn_in": self.burn_in,
            "power_efficiency": self.power_efficiency,
            "throughput": list(self.throughput),
            "mean_queue": list(self.mean_queue),
            "mean_total_queue": self.mean_total_queue,
            "max_queue": self.max_queue,
            "stability": None,
        }
        if self.stability is not None:
            s = self.stability
            out["stability"] = {
                "stable": s.stable, "slope": s.slope,
                "max_mean_queue": s.max_mean_queue, "threshold": s.threshold,
            }
        return out


@dataclass
class SimTrace:
    queues: np.ndarray
    """Queue at decision time, shape (T, N)."""
    arrivals: np.ndarray
    gains: np.ndarray
    channel_state: np.ndarray
    rates: np.ndarray
    energies: np.ndarray
    """Per-symbol energies, shape (T, N, M)."""
    mean_arrival: np.ndarray
    """Configured per-user mean arrival rates."""
    burn_in: int = 0
    symbols_per_slot: float = 1.0
    summary: Summary | None = None

    @property
    def horizon(self) -> int:
        return self.queues.shape[0]


def power_efficiency(trace: SimTrace) -> float:
    """Time-averaged total transmit energy per slot after burn-in."""
    if trace.horizon == 0:
        raise ValueError("empty trace")
    per_slot = trace.energies[trace.burn_in:].sum(axis=(1, 2))
    return float(trace.symbols_per_slot * per_slot.mean())


def stability_diagnostic(trace: SimTrace) -> StabilityReport:
    """Growth test on the second half of the trace.

    The total queue is averaged over equal windows and a least-squares line is
    fitted through the window means; the run counts as stable when that slope
    is at most ``STABILITY_EPS`` times the total mean arrival rate.
    """
    t = trace.horizon
    if t < MIN_STABILITY_HORIZON:
        raise ValueError(f"stability diagnostic needs a horizon of at least {MIN_STABILITY_HORIZON}, got {t}")
    total = trace.queues.sum(axis=1)[t // 2:]
    n_win = min(STABILITY_WINDOWS, total.size)
    width = total.size // n_win
    means = total[: n_win * width].reshape(n_win, width).mean(axis=1)
    centers = (np.arange(n_win) + 0.5) * width
    slope = float(np.polyfit(centers, means, 1)[0])
    threshold = STABILITY_EPS * float(trace.mean_arrival.sum())
    max_mean = float(trace.queues[trace.burn_in:].mean(axis=0).max())
    return StabilityReport(stable=slope <= threshold, slope=slope, max_mean_queue=max_mean, threshold=threshold)


def summarize(trace: SimTrace) -> Summary:
    kept = slice(trace.burn_in, None)
    stab = stability_diagnostic(trace) if trace.horizon >= MIN_STABILITY_HORIZON else None
    queues = trace.queues[kept]
    return Summary(
        horizon=trace.horizon,
        burn_in=trace.burn_in,
        power_efficiency=power_efficiency(trace),
        throughput=trace.rates[kept].sum(axis=2).mean(axis=0).tolist(),
        mean_queue=queues.mean(axis=0).tolist(),
        mean_total_queue=float(queues.sum(axis=1).mean()),
        max_queue=float(queues.max()),
        stability=stab,
    )


def run_simulation(scenario: Scenario) -> SimTrace:
    cfg = scenario.system
    n, m, t_max = cfg.n_users, cfg.n_bands, scenario.horizon
    rng_ch = rng_stream(scenario.seed, "channel")
    rng_arr = rng_stream(scenario.seed, "arrivals")

    queues = np.empty((t_max, n))
    arrivals = np.empty((t_max, n))
    gains = np.empty((t_max, n, m))
    states = np.empty((t_max, n, m), dtype=int)
    rates = np.empty((t_max, n, m))
    energies = np.empty((t_max, n, m))

    state = scenario.channel.initial_state(rng_ch)
    q = scenario.initial_queue.copy()
    for t in range(t_max):
        d = scenario.channel.gains(state)
        try:
            dec = schedule_slot(cfg, q, d)
        except (SolverConsistencyError, OverflowError) as exc:
            log.error("slot %d failed: queues=%s gains=%s", t, q.tolist(), d.tolist())
            raise SimulationError(t, q, d, exc) from exc
        a = sample_arrivals(scenario.arrivals, rng_arr)
        queues[t], arrivals[t], gains[t], states[t] = q, a, d, state
        rates[t], energies[t] = dec.rates, dec.energies
        q = queue_update(q, a, dec.rates)
        state = step_channel(scenario.channel, state, rng_ch)

    trace = SimTrace(
        queues=queues, arrivals=arrivals, gains=gains, channel_state=states,
        rates=rates, energies=energies, mean_arrival=scenario.arrivals.mean.copy(),
        burn_in=scenario.burn_in, symbols_per_slot=cfg.symbols_per_slot,
    )
    trace.summary = summarize(trace)
    return trace


class SimulationError(RuntimeError):
    def __init__(self, slot, queues, gains, cause):
        super().__init__(f"slot {slot}: {cause}")
        self.slot = slot
        self.queues = np.array(queues)
        self.gains = np.array(gains)
        self.cause = cause
        self.log = getattr(cause, "log", {})


# -- replications ---------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    v: float
    seed: int
    power: float
    mean_queue: float
    stable: bool | None


def _sweep_job(args):
    scenario, v, seed = args
    trace = run_simulation(scenario.with_overrides(v_param=v, seed=seed))
    s = trace.summary
    return SweepRow(
        v=v, seed=seed, power=s.power_efficiency, mean_queue=s.mean_total_queue,
        stable=None if s.stability is None else s.stability.stable,
    )


def worker_count(n_jobs: int) -> int:
    env = os.environ.get(THREADS_ENV)
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_jobs))


def run_sweep(scenario: Scenario, v_values, seeds, workers: int | None = None) -> list[SweepRow]:
    """One independent simulation per (V, seed), rows ordered V-major."""
    if not len(v_values):
        raise ConfigurationError("need at least one V value")
    jobs = [(scenario, float(v), int(s)) for v in v_values for s in seeds]
    workers = worker_count(len(jobs)) if workers is None else workers
    if workers <= 1:
        return [_sweep_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_job, jobs))
