"""Figures for simulation traces and V-sweeps, written straight to files.

Uses the object-oriented matplotlib API with the Agg canvas so nothing
touches pyplot's global state or needs a display.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {"linewidth": 1.2, "markersize": 4}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    return path


def plot_trace(trace, path, max_points=5000) -> Path:
    """Total queue and per-slot transmit energy against slot index."""
    t = trace.horizon
    stride = max(1, t // max_points)
    slots = np.arange(0, t, stride)
    total_q = trace.queues.sum(axis=1)[::stride]
    energy = trace.symbols_per_slot * trace.energies.sum(axis=(1, 2))[::stride]

    fig = Figure(figsize=(6.4, 4.8))
    ax_q, ax_e = fig.subplots(2, 1, sharex=True)
    ax_q.plot(slots, total_q, color="C0", lw=STYLE["linewidth"])
    ax_q.set_ylabel("total queue")
    ax_e.plot(slots, energy, color="C1", lw=0.6, alpha=0.7)
    ax_e.set_ylabel("energy per slot")
    ax_e.set_xlabel("slot")
    if trace.burn_in:
        for ax in (ax_q, ax_e):
            ax.axvline(trace.burn_in, color="0.5", ls=":", lw=1)
    return _save(fig, path)


def plot_sweep(rows, path) -> Path:
    """Power efficiency and mean total queue against V, one line per seed."""
    by_seed = defaultdict(list)
    for r in rows:
        by_seed[r.seed].append(r)

    fig = Figure(figsize=(6.4, 4.8))
    ax_p, ax_q = fig.subplots(2, 1, sharex=True)
    for seed, rs in sorted(by_seed.items()):
        rs = sorted(rs, key=lambda r: r.v)
        v = [r.v for r in rs]
        ax_p.plot(v, [r.power for r in rs], marker="o", ms=STYLE["markersize"], lw=STYLE["linewidth"], label=f"seed {seed}")
        ax_q.plot(v, [r.mean_queue for r in rs], marker="o", ms=STYLE["markersize"], lw=STYLE["linewidth"])
    ax_p.set_ylabel("power efficiency")
    ax_q.set_ylabel("mean total queue")
    ax_q.set_xlabel("V")
    if min(r.v for r in rows) > 0:
        ax_q.set_xscale("log")
    ax_p.legend(frameon=False, fontsize=8)
    return _save(fig, path)
