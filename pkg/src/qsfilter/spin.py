"""Spin-1/2 under continuous quadrature observation.

The spin has Hamiltonian ``H = (1/2) u . sigma`` and one coupling
``L_i = (1/2) r_i . sigma`` per observed channel.  With the basis
``I, sigma_x, sigma_y, sigma_z`` the filter state is ``e = (1, p)`` where
``p`` is the polarization (Bloch) vector, and the filter reads

    dp = -(p x u + (1/2) sum_i (|r_i|^2 p - (p . r_i) r_i)) dt
         + sum_i (r_i - (p . r_i) p) (dY_i - (p . r_i) dt).

The unnormalized companion ``f = rho p`` obeys a linear equation with
``d rho = sum_i (f . r_i) dY_i``; along every path
``rho^2 - |f|^2 = exp(-lambda(t)) (1 - |p0|^2)`` with
``lambda(t) = int_0^t sum_i |r_i|^2 ds``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.integrate
import scipy.linalg

from .ensemble import TrajectoryRecord, draw_normals, simulate_batch
from .filtering import FilterState, LinearTrajectory, ObservationChannel, SystemModel, run_linear_dual

__all__ = [
    "PAULI",
    "vector_schedule",
    "spin_model",
    "spin_channels",
    "SpinScenario",
    "CollapseMonitor",
    "simulate_spin",
    "simulate_spin_linear",
    "collapse_check",
    "accumulated_strength",
    "mean_ode",
    "precession",
]

PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)


def vector_schedule(value) -> tuple[Callable[[float], np.ndarray], bool]:
    """Turn a vector description into ``(t -> vector, time_dependent)``.

    ``value`` is a constant 3-vector, a callable, or a piecewise-constant
    table ``{"t": [t0, t1, ...], "values": [v0, v1, ...]}`` where ``v_j``
    holds on ``[t_j, t_{j+1})``.
    """
    if callable(value):
        return (lambda t: np.asarray(value(t), dtype=float)), True
    if isinstance(value, dict):
        ts = np.asarray(value["t"], dtype=float)
        vals = np.asarray(value["values"], dtype=float)
        if vals.shape != (len(ts), 3) or np.any(np.diff(ts) <= 0):
            raise ValueError("a table needs increasing breakpoints and one 3-vector per breakpoint")

        def table(t: float) -> np.ndarray:
            j = int(np.searchsorted(ts, t, side="right")) - 1
            return vals[max(j, 0)]

        return table, True
    v = np.asarray(value, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return (lambda t: v), False


def _dot_sigma(v: np.ndarray) -> np.ndarray:
    return np.einsum("j,jab->ab", v, PAULI)


def spin_model(u, rs: Sequence) -> SystemModel:
    """SystemModel with ``H = u.sigma / 2`` and ``L_i = r_i.sigma / 2``."""
    uf, u_td = vector_schedule(u)
    H = (lambda t: 0.5 * _dot_sigma(uf(t))) if u_td else 0.5 * _dot_sigma(uf(0.0))
    Ls = []
    for r in rs:
        rf, r_td = vector_schedule(r)
        Ls.append((lambda t, rf=rf: 0.5 * _dot_sigma(rf(t))) if r_td else 0.5 * _dot_sigma(rf(0.0)))
    return SystemModel(H, Ls)


def spin_channels(n: int) -> list[ObservationChannel]:
    return [ObservationChannel.diffusive(k, n) for k in range(1, n + 1)]


@dataclass
class SpinScenario:
    """Field ``u``, measurement vectors ``r``, initial polarization and grid."""

    u: object = (0.0, 0.0, 0.0)
    r: list = field(default_factory=lambda: [(0.0, 0.0, 2.0)])
    p0: tuple = (0.0, 0.0, 0.0)
    T: float = 1.0
    dt: float = 1e-3
    seed: int = 0
    ensemble: int = 1

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=float)
        if p0.shape != (3,):
            raise ValueError("p0 must be a 3-vector")
        if np.linalg.norm(p0) > 1 + 1e-12:
            raise ValueError(f"|p0| = {np.linalg.norm(p0):.6g} exceeds 1")
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("T and dt must be positive")
        if not self.r:
            raise ValueError("need at least one measurement vector")

    @property
    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if abs(n * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"T={self.T} is not a whole number of steps of dt={self.dt}")
        return n

    @property
    def n_ch(self) -> int:
        return len(self.r)

    def model(self) -> SystemModel:
        return spin_model(self.u, self.r)

    def channels(self) -> list[ObservationChannel]:
        return spin_channels(self.n_ch)

    def e0(self) -> np.ndarray:
        return np.concatenate([[1.0], np.asarray(self.p0, dtype=float)])

    def with_dt(self, dt: float) -> SpinScenario:
        return SpinScenario(self.u, list(self.r), tuple(self.p0), self.T, dt, self.seed, self.ensemble)


@dataclass
class CollapseMonitor:
    """``residual = rho^2 - |f|^2 - exp(-lambda) (1 - |p0|^2)`` along a path.

    ``purity_defect`` is ``1 - |p|^2`` of the nonlinear filter and
    ``predicted_defect`` is ``exp(-lambda) (1 - |p0|^2) / rho^2``; the two
    agree in continuous time.
    """

    t: np.ndarray
    lam: np.ndarray
    residual: np.ndarray
    max_abs: np.ndarray
    purity_defect: np.ndarray
    predicted_defect: np.ndarray

    @property
    def terminal_defect(self) -> np.ndarray:
        return self.purity_defect[-1]


def accumulated_strength(scenario: SpinScenario, t: np.ndarray) -> np.ndarray:
    """``lambda(t) = int_0^t sum_i |r_i(s)|^2 ds`` with left-endpoint sampling."""
    t = np.asarray(t, dtype=float)
    fs = [vector_schedule(r) for r in scenario.r]
    if not any(td for _, td in fs):
        rate = sum(float(np.dot(f(0.0), f(0.0))) for f, _ in fs)
        return rate * t
    dt = scenario.dt
    grid = dt * np.arange(scenario.n_steps + 1)
    rates = np.array([sum(float(np.dot(f(s), f(s))) for f, _ in fs) for s in grid[:-1]])
    cum = np.concatenate([[0.0], np.cumsum(rates) * dt])
    return np.interp(t, grid, cum)


def simulate_spin(scenario: SpinScenario, dW: np.ndarray | None = None, traj: int = 0,
                  project: bool = False, stride: int = 1, scheme: str = "euler",
                  drift: str = "euler") -> TrajectoryRecord:
    """Nonlinear filter path(s).

    ``dW`` has shape ``(n_steps, n_ch)`` or ``(n_steps, batch, n_ch)``; when
    omitted it is drawn from stream ``traj`` of ``scenario.seed``.
    """
    if dW is None:
        dW = draw_normals(scenario.seed, [traj], scenario.n_steps, scenario.n_ch, scenario.dt)[:, 0]
    dW = np.asarray(dW, dtype=float)
    squeeze = dW.ndim == 2
    noise = dW[:, None, :] if squeeze else dW
    if noise.shape[0] != scenario.n_steps or noise.shape[-1] != scenario.n_ch:
        raise ValueError(f"noise of shape {dW.shape} does not fit "
                         f"{scenario.n_steps} steps x {scenario.n_ch} channels")
    rec = simulate_batch(scenario.model(), scenario.channels(), scenario.e0(), scenario.dt, noise,
                         project=project, stride=stride, scheme=scheme, drift=drift)
    rec.names = ("I", "p1", "p2", "p3")
    return rec.trajectory(0) if squeeze else rec


def simulate_spin_linear(scenario: SpinScenario, dY: np.ndarray, scheme: str = "euler",
                         stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Linear companion ``(f, rho)`` driven by the observations ``dY``."""
    dY = np.asarray(dY, dtype=float)
    traj: LinearTrajectory = run_linear_dual(scenario.model(), scenario.channels(),
                                             FilterState(scenario.e0()), dY, scenario.dt,
                                             scheme=scheme, stride=stride)
    return traj.f[..., 1:], traj.rho


def collapse_check(record: TrajectoryRecord, scenario: SpinScenario, f: np.ndarray | None = None,
                   rho: np.ndarray | None = None, scheme: str = "euler") -> CollapseMonitor:
    """Monitor the purity law along one path or a batch.

    The linear pair is integrated on ``record.dY`` unless ``f`` and ``rho``
    are supplied.  ``record`` must be at full resolution.
    """
    if f is None or rho is None:
        f, rho = simulate_spin_linear(scenario, record.dY, scheme)
    t = record.t
    lam = accumulated_strength(scenario, t)
    p0sq = float(np.dot(scenario.p0, scenario.p0))
    decay = np.exp(-lam) * (1.0 - p0sq)
    shape = (-1,) + (1,) * (rho.ndim - 1)
    residual = rho**2 - np.sum(f**2, axis=-1) - decay.reshape(shape)
    defect = 1.0 - np.sum(record.e[..., 1:] ** 2, axis=-1)
    predicted = decay.reshape(shape) / rho**2
    return CollapseMonitor(t, lam, residual, np.max(np.abs(residual), axis=0), defect, predicted)


def _drift_matrix(u: np.ndarray, rs: Sequence[np.ndarray]) -> np.ndarray:
    # dp/dt = M p with p x u = -[u]_x p
    ux = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    M = ux.copy()
    for r in rs:
        M -= 0.5 * (np.dot(r, r) * np.eye(3) - np.outer(r, r))
    return M


def mean_ode(scenario: SpinScenario, t: np.ndarray) -> np.ndarray:
    """Ensemble-mean polarization from the innovation-free linear ODE."""
    t = np.asarray(t, dtype=float)
    uf, u_td = vector_schedule(scenario.u)
    fs = [vector_schedule(r) for r in scenario.r]
    p0 = np.asarray(scenario.p0, dtype=float)
    if not u_td and not any(td for _, td in fs):
        M = _drift_matrix(uf(0.0), [f(0.0) for f, _ in fs])
        return np.array([scipy.linalg.expm(M * s) @ p0 for s in t])

    def rhs(s, p):
        return _drift_matrix(uf(s), [f(s) for f, _ in fs]) @ p

    sol = scipy.integrate.solve_ivp(rhs, (0.0, float(t.max())), p0, t_eval=t, rtol=1e-11, atol=1e-13,
                                    method="DOP853")
    return sol.y.T


def precession(p0, u, t) -> np.ndarray:
    """Closed-form ``dp/dt = -p x u`` (rotation of ``p0`` about ``u``)."""
    p0 = np.asarray(p0, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.linalg.norm(u)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if w == 0:
        return np.tile(p0, (len(t), 1))
    n = u / w
    par = np.dot(p0, n) * n
    perp = p0 - par
    # -p x u = u x p, a right-handed rotation about u at rate |u|
    return np.array([par + np.cos(w * s) * perp + np.sin(w * s) * np.cross(n, perp) for s in t])
