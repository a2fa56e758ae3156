"""Shared domain types and the queue update law.

Index conventions used throughout the package:

* users are indexed ``0..N-1`` in their original (input) order,
* bands are indexed ``0..M-1``,
* rates are in nats per slot, so energies follow ``exp(R)`` directly,
* queues are real valued (fluid model).

Gain, rate and energy matrices are plain ``numpy`` arrays of shape ``(N, M)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    """Raised when inputs violate a structural invariant (shape, sign, finiteness)."""


@dataclass(frozen=True)
class SystemConfig:
    n_users: int
    n_bands: int
    noise_psd: float
    v_param: float
    symbols_per_slot: float = 1.0

    def __post_init__(self):
        if int(self.n_users) != self.n_users or self.n_users < 1:
            raise ConfigurationError(f"n_users must be a positive integer, got {self.n_users!r}")
        if int(self.n_bands) != self.n_bands or self.n_bands < 1:
            raise ConfigurationError(f"n_bands must be a positive integer, got {self.n_bands!r}")
        if not np.isfinite(self.noise_psd) or self.noise_psd <= 0:
            raise ConfigurationError(f"noise_psd must be positive and finite, got {self.noise_psd!r}")
        if not np.isfinite(self.v_param) or self.v_param < 0:
            raise ConfigurationError(f"v_param must be nonnegative and finite, got {self.v_param!r}")
        if not np.isfinite(self.symbols_per_slot) or self.symbols_per_slot <= 0:
            raise ConfigurationError(
                f"symbols_per_slot must be positive, got {self.symbols_per_slot!r}"
            )

    @property
    def vn0(self) -> float:
        """Energy price ``V * N0`` that weighs energy against queue drain."""
        return float(self.v_param * self.noise_psd)


def as_queue_vector(q, n_users: int | None = None) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise ConfigurationError(f"queue vector must be 1-D, got shape {q.shape}")
    if n_users is not None and q.shape[0] != n_users:
        raise ConfigurationError(f"queue vector has length {q.shape[0]}, expected {n_users}")
    if not np.all(np.isfinite(q)):
        raise ConfigurationError("queue entries must be finite")
    if np.any(q < 0):
        k = int(np.flatnonzero(q < 0)[0])
        raise ConfigurationError(f"queue entry {k} is negative ({q[k]!r})")
    return q


def as_gain_matrix(d, n_users: int | None = None, n_bands: int | None = None) -> np.ndarray:
    """Coerce ``d`` to an ``(N, M)`` float matrix; a 1-D input is a single band."""
    d = np.asarray(d, dtype=float)
    if d.ndim == 1:
        d = d[:, None]
    if d.ndim != 2:
        raise ConfigurationError(f"gain matrix must be 2-D, got shape {d.shape}")
    if n_users is not None and d.shape[0] != n_users:
        raise ConfigurationError(f"gain matrix has {d.shape[0]} rows, expected {n_users}")
    if n_bands is not None and d.shape[1] != n_bands:
        raise ConfigurationError(f"gain matrix has {d.shape[1]} columns, expected {n_bands}")
    bad = ~np.isfinite(d) | (d <= 0)
    if np.any(bad):
        k, m = (int(i) for i in np.argwhere(bad)[0])
        raise ConfigurationError(f"gain must be positive and finite: d[{k},{m}] = {d[k, m]!r}")
    return d


def queue_update(q, a, r) -> np.ndarray:
    """One slot of queue evolution: ``max(q + a - sum_m r[:, m], 0)``.

    ``r`` is the ``(N, M)`` rate matrix; a 1-D ``r`` is read as the per-user
    total service already summed over bands.
    """
    q = np.asarray(q, dtype=float)
    a = np.asarray(a, dtype=float)
    r = np.asarray(r, dtype=float)
    service = r if r.ndim == 1 else r.sum(axis=1)
    if not (q.shape == a.shape == service.shape) or q.ndim != 1:
        raise ConfigurationError(
            f"dimension mismatch: q{q.shape}, a{a.shape}, r{r.shape}"
        )
    return np.maximum(q + a - service, 0.0)


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self):
        # truthy when there is anything to report
        return bool(self.errors or self.warnings)

    def raise_if_invalid(self):
        if self.errors:
            raise ConfigurationError("; ".join(self.errors))


def validate_config(cfg: SystemConfig, d) -> ValidationReport:
    """Check a gain matrix against ``cfg`` without raising.

    Non-positive or non-finite gains and a bad noise level are errors. Gains
    tied within one band are only warned about, since they are perturbed
    apart before solving.
    """
    report = ValidationReport()
    if not (np.isfinite(cfg.noise_psd) and cfg.noise_psd > 0):
        report.errors.append(f"noise_psd must be positive, got {cfg.noise_psd!r}")
    d = np.asarray(d, dtype=float)
    if d.ndim == 1:
        d = d[:, None]
    if d.shape != (cfg.n_users, cfg.n_bands):
        report.errors.append(
            f"gain matrix shape {d.shape} does not match ({cfg.n_users}, {cfg.n_bands})"
        )
        return report
    for k, m in np.argwhere(~np.isfinite(d)):
        report.errors.append(f"gain must be finite: d[{k},{m}] = {d[k, m]!r}")
    for k, m in np.argwhere(np.isfinite(d) & (d <= 0)):
        report.errors.append(f"gain must be positive: d[{k},{m}] = {d[k, m]!r}")
    for m in range(cfg.n_bands):
        col = d[:, m]
        col = col[np.isfinite(col)]
        if np.unique(col).size < col.size:
            report.warnings.append(f"tied gains band {m + 1}")
    return report
