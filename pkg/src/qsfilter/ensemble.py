"""Trajectory batches, reproducible noise streams and ensemble summaries.

Every trajectory ``k`` owns a Philox stream keyed by ``(seed, k)``, so a
trajectory's noise does not depend on the ensemble size, the chunking or
the order in which trajectories are processed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .filtering import (
    FilterState,
    ObservationChannel,
    SystemModel,
    purity,
    step_counting,
    update_diffusive,
)

__all__ = [
    "substream",
    "draw_normals",
    "draw_uniforms",
    "coarsen",
    "TrajectoryRecord",
    "EnsembleSummary",
    "simulate_batch",
    "run_ensemble",
    "write_jsonl",
]


def substream(seed: int, k: int) -> np.random.Generator:
    """Independent generator for trajectory ``k`` of master seed ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(k),))))


def draw_normals(seed: int, indices: Sequence[int], n_steps: int, n_ch: int, dt: float) -> np.ndarray:
    """Wiener increments of shape ``(n_steps, len(indices), n_ch)``."""
    out = np.empty((n_steps, len(indices), n_ch))
    sd = math.sqrt(dt)
    for j, k in enumerate(indices):
        out[:, j, :] = substream(seed, k).standard_normal((n_steps, n_ch)) * sd
    return out


def draw_uniforms(seed: int, indices: Sequence[int], n_steps: int) -> np.ndarray:
    """Uniform draws on ``[0, 1)`` of shape ``(n_steps, len(indices))``."""
    out = np.empty((n_steps, len(indices)))
    for j, k in enumerate(indices):
        out[:, j] = substream(seed, k).random(n_steps)
    return out


def coarsen(dW: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive groups of ``factor`` increments along the first axis."""
    n = dW.shape[0]
    if n % factor:
        raise ValueError(f"{n} steps do not split into groups of {factor}")
    return dW.reshape((n // factor, factor) + dW.shape[1:]).sum(axis=1)


@dataclass
class TrajectoryRecord:
    """Filter output on a time grid.

    Arrays carry the time axis first and any batch axes next:
    ``e`` is ``(n+1, ..., n_basis)``, ``dY`` and ``innovations`` are
    ``(n, ..., n_channels)``.
    """

    t: np.ndarray
    dY: np.ndarray
    innovations: np.ndarray
    e: np.ndarray
    purity: np.ndarray
    rho: np.ndarray | None = None
    names: tuple = ()

    def trajectory(self, k: int) -> TrajectoryRecord:
        """Slice out batch member ``k`` (single batch axis assumed)."""
        return TrajectoryRecord(
            self.t, self.dY[:, k], self.innovations[:, k], self.e[:, k], self.purity[:, k],
            None if self.rho is None else self.rho[:, k], self.names)

    def jsonl_lines(self, index: int | None = None) -> list[str]:
        lines = []
        for j, t in enumerate(self.t):
            row = {"t": float(t)}
            if index is not None:
                row["traj"] = int(index)
            if j == 0:
                row["dY"] = None
                row["innovation"] = None
            else:
                row["dY"] = np.atleast_1d(self.dY[j - 1]).tolist()
                row["innovation"] = np.atleast_1d(self.innovations[j - 1]).tolist()
            row["e"] = np.atleast_1d(self.e[j]).tolist()
            row["p2"] = float(self.purity[j])
            row["rho"] = None if self.rho is None else float(self.rho[j])
            lines.append(json.dumps(row))
        return lines


def write_jsonl(path, records: Sequence[tuple[int, TrajectoryRecord]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, rec in records:
            for line in rec.jsonl_lines(k):
                fh.write(line + "\n")


def simulate_batch(model: SystemModel, channels: Sequence[ObservationChannel], e0, dt: float,
                   noise: np.ndarray, mode: str = "diffusive", observed: bool = False,
                   project: bool = False, stride: int = 1, t0: float = 0.0,
                   scheme: str = "euler", drift: str = "euler") -> TrajectoryRecord:
    """Run the filter over a batch of noise realizations.

    Parameters
    ----------
    noise : ndarray
        ``mode="diffusive"``: innovations ``dW`` of shape ``(n, batch, c)``,
        or observed increments ``dY`` when ``observed`` is set.
        ``mode="counting"``: uniform draws of shape ``(n, batch)``.
    stride : int
        Keep every ``stride``-th grid point (and the last).
    scheme, drift : str
        Passed to :func:`update_diffusive`.
    """
    n = noise.shape[0]
    batch = noise.shape[1:-1] if mode == "diffusive" else noise.shape[1:]
    e = np.broadcast_to(np.asarray(e0, dtype=float), batch + (model.n_basis,)).copy()
    state = FilterState(e, 1.0, t0)
    ts, es, dys, inns = [t0], [e.copy()], [], []
    acc_dy = np.zeros(batch + (len(channels),))
    acc_in = np.zeros_like(acc_dy)
    for j in range(n):
        if mode == "diffusive":
            if observed:
                dY = noise[j]
                state, innov = update_diffusive(model, channels, state, dY, dt, project,
                                                scheme=scheme, drift=drift)
            else:
                comp = state.e @ model.tensors(channels, state.t).R.T
                innov = noise[j]
                dY = comp * dt + innov
                state, _ = update_diffusive(model, channels, state, dY, dt, project,
                                            scheme=scheme, drift=drift)
        elif mode == "counting":
            intensity = state.e @ model.tensors(channels, state.t).R[0]
            state, jump = step_counting(model, channels[0], state, noise[j], dt)
            dY = jump.astype(float)[..., None]
            innov = dY - intensity[..., None] * dt
        else:
            raise ValueError(f"unknown mode {mode!r}")
        # the grid time is recomputed from the index so that it does not drift
        state.t = t0 + (j + 1) * dt
        acc_dy = acc_dy + dY
        acc_in = acc_in + innov
        if (j + 1) % stride == 0 or j == n - 1:
            ts.append(state.t)
            es.append(state.e.copy())
            dys.append(acc_dy)
            inns.append(acc_in)
            acc_dy = np.zeros_like(acc_dy)
            acc_in = np.zeros_like(acc_in)
    E = np.array(es)
    return TrajectoryRecord(np.array(ts), np.array(dys), np.array(inns), E, purity(model, E))


@dataclass
class EnsembleSummary:
    """Checkpoint means and standard errors plus terminal diagnostics."""

    t: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    names: tuple
    M: int
    purity_edges: np.ndarray
    purity_mass: np.ndarray
    innovation_moments: dict = field(default_factory=dict)
    residual_stats: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = ["t"]
            for nm in self.names:
                header += [f"mean_{nm}", f"stderr_{nm}"]
            w.writerow(header)
            for j, t in enumerate(self.t):
                row = [repr(float(t))]
                for a in range(len(self.names)):
                    row += [repr(float(self.mean[j, a])), repr(float(self.stderr[j, a]))]
                w.writerow(row)

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "t": self.t.tolist(),
            "names": list(self.names),
            "mean": self.mean.tolist(),
            "stderr": self.stderr.tolist(),
            "purity_histogram": {"edges": self.purity_edges.tolist(), "mass": self.purity_mass.tolist()},
            "innovation_moments": self.innovation_moments,
            "residual_stats": self.residual_stats,
        }


def run_ensemble(model: SystemModel, channels: Sequence[ObservationChannel], e0, T: float, dt: float,
                 M: int, seed: int, mode: str = "diffusive", n_checkpoints: int = 10,
                 keep: int = 0, chunk: int = 2000, project: bool = False,
                 names: Sequence[str] | None = None, bins: int = 20, scheme: str = "euler",
                 drift: str = "euler"):
    """Simulate ``M`` trajectories in chunks and reduce to an :class:`EnsembleSummary`.

    Returns ``(summary, kept)`` where ``kept`` lists ``(k, record)`` for the
    first ``keep`` trajectories at full resolution.
    """
    if M < 1:
        raise ValueError("ensemble size must be at least 1")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a whole number of steps of dt={dt}")
    n_checkpoints = max(1, min(n_checkpoints, n))
    stride = n // n_checkpoints if n % n_checkpoints == 0 else 1
    names = tuple(names) if names is not None else tuple(f"X{a}" for a in range(model.n_basis))
    c = len(channels)
    s1 = s2 = None
    in1 = np.zeros(c)
    in2 = np.zeros(c)
    hist_edges = np.linspace(0.0, 1.0, bins + 1)
    hist = np.zeros(bins)
    kept = []
    t_grid = None
    for start in range(0, M, chunk):
        idx = list(range(start, min(M, start + chunk)))
        if mode == "diffusive":
            noise = draw_normals(seed, idx, n, c, dt)
        else:
            noise = draw_uniforms(seed, idx, n)
        keep_here = [k for k in idx if k < keep]
        if keep_here:
            full = simulate_batch(model, channels, e0, dt, noise[:, :len(keep_here)], mode, project=project,
                                  scheme=scheme, drift=drift)
            kept += [(k, full.trajectory(j)) for j, k in enumerate(keep_here)]
        rec = simulate_batch(model, channels, e0, dt, noise, mode, project=project, stride=stride,
                             scheme=scheme, drift=drift)
        t_grid = rec.t
        part1 = rec.e.sum(axis=1)
        part2 = (rec.e**2).sum(axis=1)
        s1 = part1 if s1 is None else s1 + part1
        s2 = part2 if s2 is None else s2 + part2
        total_in = rec.innovations.sum(axis=0)
        in1 = in1 + total_in.sum(axis=0)
        in2 = in2 + (total_in**2).sum(axis=0)
        h, _ = np.histogram(np.clip(rec.purity[-1], 0.0, 1.0), bins=hist_edges)
        hist += h
    mean = s1 / M
    var = np.maximum(s2 / M - mean**2, 0.0) * (M / max(M - 1, 1))
    stderr = np.sqrt(var / M)
    imean = in1 / M
    ivar = np.maximum(in2 / M - imean**2, 0.0) * (M / max(M - 1, 1))
    moments = {"T": float(n * dt), "mean": imean.tolist(), "var": ivar.tolist()}
    summary = EnsembleSummary(t_grid, mean, stderr, names, M, hist_edges, hist / M, moments)
    return summary, kept
