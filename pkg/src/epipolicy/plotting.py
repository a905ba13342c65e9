"""PNG figures rendered next to the CSV outputs.

Figures are built on bare :class:`matplotlib.figure.Figure` objects with the
Agg canvas, so nothing touches pyplot's global state and the module works
headless.  Each function takes the same data the matching CSV holds.
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import Sequence

import matplotlib
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .core import Trajectory
from .reporting import atomic_write_bytes

STYLE = {
    "font.size": 9,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
    "legend.frameon": False,
    "legend.fontsize": 8,
}

PHASE_SHADES = ("#ffffff", "#f3d9d9", "#f6ecd2", "#dde9f3")


def _figure(ncols=1, width=6.0, height=3.4):
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(width, height), constrained_layout=True)
        FigureCanvasAgg(fig)
        axes = [fig.add_subplot(1, ncols, k + 1) for k in range(ncols)]
    return fig, axes


def save(fig: Figure, path) -> Path:
    buf = io.BytesIO()
    # no timestamp or version metadata so reruns give identical bytes
    fig.savefig(buf, format="png", dpi=120, metadata={"Software": None})
    return atomic_write_bytes(Path(path), buf.getvalue())


def _shade_phases(ax, traj: Trajectory):
    phase = np.asarray(traj.phase)
    t = np.asarray(traj.times)
    edges = np.flatnonzero(np.diff(phase)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [len(t) - 1]])
    for a, b in zip(starts, ends):
        k = int(phase[a])
        if k > 0:
            ax.axvspan(t[a], t[b], color=PHASE_SHADES[k], lw=0, zorder=0)


def plot_trajectory(path, traj: Trajectory, sigma_icu: float, icu_capacity: float,
                    title: str = "", reported: tuple | None = None) -> Path:
    """Infected count and ICU load with phases shaded, R(t) on the right panel.

    ``reported`` is an optional ``(days, counts)`` pair overlaid as points.
    """
    with matplotlib.rc_context(STYLE):
        fig, (ax, axr) = _figure(ncols=2, width=9.0)
        _shade_phases(ax, traj)
        ax.plot(traj.times, traj.infected_count, color="C0", label="N i(t)")
        ax.plot(traj.times, traj.icu_load(sigma_icu), color="C3", label="ICU load")
        ax.axhline(icu_capacity, color="C3", ls=":", lw=0.9, label="ICU capacity")
        if reported is not None:
            ax.plot(reported[0], reported[1], "k.", ms=2.5, label="reported")
        ax.set_xlabel("day")
        ax.set_ylabel("persons")
        ax.legend(loc="upper right")
        _shade_phases(axr, traj)
        axr.plot(traj.times, traj.r_eff, color="C2")
        axr.axhline(1.0, color="0.5", lw=0.7, ls="--")
        axr.set_xlabel("day")
        axr.set_ylabel("R(t)")
        if title:
            fig.suptitle(title)
        return save(fig, path)


def plot_tradeoff(path, gdp_loss: Sequence[float], infected: Sequence[float],
                  alphas: Sequence[float], reference: tuple | None = None) -> Path:
    """Health cost against economic cost over the alpha sweep."""
    gdp = np.asarray(gdp_loss, dtype=float)
    inf = np.asarray(infected, dtype=float)
    ok = np.isfinite(gdp) & np.isfinite(inf)
    with matplotlib.rc_context(STYLE):
        fig, (ax,) = _figure(width=5.0)
        sc = ax.scatter(gdp[ok] / 1e9, inf[ok], c=np.log10(np.asarray(alphas)[ok]), cmap="viridis", s=18)
        ax.plot(gdp[ok] / 1e9, inf[ok], color="0.6", lw=0.8, zorder=0)
        if reference is not None:
            ax.plot(reference[0] / 1e9, reference[1], "rx", ms=7, label="reference policy")
            ax.legend()
        ax.set_yscale("log")
        ax.set_xlabel("GDP loss (billions)")
        ax.set_ylabel("infected total")
        fig.colorbar(sc, ax=ax, label="log10 alpha")
        return save(fig, path)


def plot_feature_sweep(path, rows: Sequence[dict]) -> Path:
    """Optimal tau0 and tau1 against alpha, one line per (mu1, mu2) pair."""
    pairs = sorted({(r["mu1"], r["mu2"]) for r in rows})
    with matplotlib.rc_context(STYLE):
        fig, (a0, a1) = _figure(ncols=2, width=8.0)
        for mu in pairs:
            sel = sorted((r for r in rows if (r["mu1"], r["mu2"]) == mu and r["tau0"] is not None),
                         key=lambda r: r["alpha"])
            x = [r["alpha"] for r in sel]
            lab = f"mu=({mu[0]:g}, {mu[1]:g})"
            a0.plot(x, [r["tau0"] for r in sel], marker="o", ms=3, label=lab)
            a1.plot(x, [r["tau1"] for r in sel], marker="o", ms=3, label=lab)
        for ax, name in ((a0, "optimal tau0 (days)"), (a1, "optimal tau1 (days)")):
            ax.set_xscale("log")
            ax.set_xlabel("alpha")
            ax.set_ylabel(name)
        a1.legend()
        return save(fig, path)


def plot_sensitivity(path, trajectories: dict, sigma_icu: float, icu_capacity: float) -> Path:
    """Optimal-policy ICU load for each R0."""
    with matplotlib.rc_context(STYLE):
        fig, (ax,) = _figure(width=5.5)
        for r0, traj in sorted(trajectories.items()):
            ax.plot(traj.times, traj.icu_load(sigma_icu), label=f"R0={r0:g}")
        ax.axhline(icu_capacity, color="k", ls=":", lw=0.9)
        ax.set_xlabel("day")
        ax.set_ylabel("ICU load")
        ax.legend()
        return save(fig, path)


def plot_uncertainty(path, sigma_levels, bias_tau0, bias_r1) -> Path:
    with matplotlib.rc_context(STYLE):
        fig, (a0, a1) = _figure(ncols=2, width=8.0)
        a0.plot(sigma_levels, bias_tau0, marker="o", ms=3)
        a0.set_ylabel("mean |tau0 - tau0*| (days)")
        a1.plot(sigma_levels, bias_r1, marker="o", ms=3, color="C1")
        a1.set_ylabel("mean |R1 - R1*|")
        for ax in (a0, a1):
            ax.set_xlabel("sigma of R0 noise")
        return save(fig, path)


def plot_adjustment(path, trajectories: dict, sigma_icu: float, icu_capacity: float,
                    adjustment_start: int) -> Path:
    """ICU load for each adjustment-phase target."""
    with matplotlib.rc_context(STYLE):
        fig, (ax, axr) = _figure(ncols=2, width=9.0)
        for r3, traj in sorted(trajectories.items()):
            ax.plot(traj.times, traj.icu_load(sigma_icu), label=f"R3={r3:g}")
            axr.plot(traj.times, traj.r_eff, label=f"R3={r3:g}")
        for a in (ax, axr):
            a.axvline(adjustment_start, color="0.5", lw=0.7, ls="--")
            a.set_xlabel("day")
        ax.axhline(icu_capacity, color="k", ls=":", lw=0.9)
        ax.set_yscale("log")
        ax.set_ylabel("ICU load")
        axr.set_ylabel("R(t)")
        axr.legend(fontsize=7, ncol=2)
        return save(fig, path)
