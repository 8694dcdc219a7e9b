"""SVG rendering of ensemble summaries.  matplotlib is optional."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        return None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def emit_plots(outdir, summary=None, kept=(), reference=None, collapse=None) -> list[Path]:
    """Write SVG plots and return their paths.

    Parameters
    ----------
    summary : EnsembleSummary, optional
        Mean observables with stderr bands.
    kept : sequence of (k, TrajectoryRecord)
        Sample trajectories for the purity plot.
    reference : (t, values), optional
        Deterministic curves overlaid on the means (one column per
        non-identity observable).
    collapse : CollapseMonitor, optional
        Single-path monitor; plots ``1 - |p|^2`` against the predicted
        ``exp(-lambda)(1 - |p0|^2) / rho^2`` and ``lambda(t)``.
    """
    plt = _pyplot()
    if plt is None:
        log.warning("matplotlib is not installed; skipping plots")
        return []
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    if summary is not None:
        fig, ax = plt.subplots(figsize=(6, 4))
        for a, name in enumerate(summary.names):
            if a == 0 and name in ("I", "X0"):
                continue
            line, = ax.plot(summary.t, summary.mean[:, a], label=f"mean {name}")
            ax.fill_between(summary.t, summary.mean[:, a] - 2 * summary.stderr[:, a],
                            summary.mean[:, a] + 2 * summary.stderr[:, a],
                            color=line.get_color(), alpha=0.25)
        if reference is not None:
            rt, rv = reference
            for col in np.atleast_2d(np.asarray(rv).T):
                ax.plot(rt, col, "k--", lw=0.8)
        ax.set_xlabel("t")
        ax.set_title(f"ensemble means (M = {summary.M})")
        ax.legend(fontsize="small")
        p = outdir / "means.svg"
        fig.savefig(p)
        plt.close(fig)
        paths.append(p)
    if kept:
        fig, ax = plt.subplots(figsize=(6, 4))
        for k, rec in kept:
            ax.plot(rec.t, rec.purity, lw=0.8, label=f"trajectory {k}")
        ax.set_xlabel("t")
        ax.set_ylabel("purity")
        if len(kept) <= 8:
            ax.legend(fontsize="small")
        p = outdir / "purity.svg"
        fig.savefig(p)
        plt.close(fig)
        paths.append(p)
    if collapse is not None:
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
        ax1.semilogy(collapse.t, np.abs(collapse.purity_defect) + 1e-300, label="1 - |p|^2")
        ax1.semilogy(collapse.t, np.abs(collapse.predicted_defect) + 1e-300, "k--",
                     label="exp(-lambda)(1 - |p0|^2) / rho^2")
        ax1.legend(fontsize="small")
        ax2.plot(collapse.t, collapse.lam, label="lambda(t)")
        ax2.plot(collapse.t, np.exp(-collapse.lam), label="exp(-lambda)")
        ax2.set_xlabel("t")
        ax2.legend(fontsize="small")
        p = outdir / "collapse.svg"
        fig.savefig(p)
        plt.close(fig)
        paths.append(p)
    return paths
