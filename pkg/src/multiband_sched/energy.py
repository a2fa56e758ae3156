"""Superposition coding / successive decoding energy on a single band.

With users decoded in order ``sigma`` (first decoded sees every later user as
interference), user ``sigma[k]`` needs per-symbol transmit energy

    E = n0 / d[sigma[k]] * (exp(R[sigma[k]]) - 1) * exp(sum_{i<k} R[sigma[i]])

The energy-minimising order is the one sorting gains in nondecreasing order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ConfigurationError

# exp(700) is close to the float64 limit (~exp(709.78))
MAX_EXPONENT = 700.0
TIE_STEP = 1e-9


class EnergyOverflowError(OverflowError):
    """Cumulative rate exponent too large to represent the required energy."""


@dataclass(frozen=True)
class DecodeOrder:
    pi: np.ndarray
    """User indices in decode order (weakest gain first)."""
    tie_rank: np.ndarray
    """Per user, its rank inside its group of exactly tied gains (0 if untied)."""

    def __len__(self):
        return len(self.pi)


@dataclass(frozen=True)
class BandEnergyResult:
    per_user_energy: np.ndarray
    """Energy per symbol, indexed by original user index."""
    total: float


def _check_gains(gains) -> np.ndarray:
    gains = np.asarray(gains, dtype=float)
    if gains.ndim != 1:
        raise ConfigurationError(f"gains must be 1-D, got shape {gains.shape}")
    if np.any(~np.isfinite(gains) | (gains <= 0)):
        k = int(np.flatnonzero(~np.isfinite(gains) | (gains <= 0))[0])
        raise ConfigurationError(f"gain must be positive: gains[{k}] = {gains[k]!r}")
    return gains


def _tie_ranks(gains: np.ndarray) -> np.ndarray:
    ranks = np.zeros(gains.size, dtype=int)
    seen: dict[float, int] = {}
    for k, g in enumerate(gains.tolist()):
        ranks[k] = seen.get(g, 0)
        seen[g] = ranks[k] + 1
    return ranks


def perturb_ties(gains) -> np.ndarray:
    """Separate exactly tied gains: ``d * (1 + j * 1e-9)`` for the j-th copy.

    Copies are ranked by original index, so the perturbation is deterministic
    and agrees with the stable decode order.
    """
    gains = _check_gains(gains)
    ranks = _tie_ranks(gains)
    if not ranks.any():
        return gains.copy()
    return gains * (1.0 + ranks * TIE_STEP)


def decode_order(gains) -> DecodeOrder:
    gains = _check_gains(gains)
    pi = np.argsort(gains, kind="stable")
    return DecodeOrder(pi=pi, tie_rank=_tie_ranks(gains))


def energy_for_order(gains, rates, order, n0: float) -> BandEnergyResult:
    """Successive-decoding energies for an arbitrary decode order.

    The interference exponent is carried as a running sum of rates (log
    domain); a cumulative exponent above ``MAX_EXPONENT`` raises
    :class:`EnergyOverflowError` instead of returning ``inf``.
    """
    gains = _check_gains(gains)
    rates = np.asarray(rates, dtype=float)
    n = gains.size
    if rates.shape != (n,):
        raise ConfigurationError(f"rates shape {rates.shape} does not match gains ({n},)")
    if np.any(~np.isfinite(rates)) or np.any(rates < 0):
        raise ConfigurationError("rates must be finite and nonnegative")
    if not n0 > 0:
        raise ConfigurationError(f"noise level must be positive, got {n0!r}")
    order = np.asarray(order)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise ConfigurationError(f"decode order {order.tolist()} is not a permutation of 0..{n - 1}")

    energy = _energies_in_order(gains.tolist(), rates.tolist(), order.tolist(), n0)
    return BandEnergyResult(per_user_energy=np.array(energy), total=math.fsum(energy))


def _energies_in_order(gains, rates, order, n0):
    # unchecked core on plain lists; the running exponent stays a sum of rates
    energy = [0.0] * len(gains)
    before = 0.0
    for k in order:
        r = rates[k]
        if before + r > MAX_EXPONENT:
            raise EnergyOverflowError(
                f"cumulative rate exponent {before + r:.6g} exceeds {MAX_EXPONENT:g}"
            )
        if r:
            energy[k] = n0 / gains[k] * math.expm1(r) * math.exp(before)
        before += r
    return energy


def sorted_band(gains):
    """Unchecked list version of ``perturb_ties`` + ``decode_order``.

    Returns ``(perturbed_gains, pi)`` as plain lists.
    """
    seen = {}
    out = list(gains)
    for k, g in enumerate(gains):
        j = seen.get(g, 0)
        if j:
            out[k] = g * (1.0 + j * TIE_STEP)
        seen[g] = j + 1
    return out, sorted(range(len(out)), key=gains.__getitem__)


def superposition_energies(gains, rates, n0: float) -> BandEnergyResult:
    """Minimum total energy realising ``rates``: decode in increasing-gain order."""
    return energy_for_order(gains, rates, decode_order(gains).pi, n0)
