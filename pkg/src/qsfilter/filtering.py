"""Filtering equations for finite-dimensional systems under continuous observation.

The a-posteriori state is stored as the vector ``e`` of expectations of a
Hermitian operator basis ``X_0 = I, X_1, ...``.  Every quantity the filter
needs (drift, compensators, correlation matrix, gain right-hand sides) is an
expectation of a corner entry ``(Z* M Z)^-_+`` of a star-matrix product, so
it is linear in ``e`` and is precomputed once as a coefficient tensor.

States may carry leading batch axes: ``e.shape == (..., n_basis)``.  All
update functions act on whole batches at once.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .fockbin import NonCommutingError, joint_spectral_decomposition
from .starmatrix import GENERATOR, StarMatrix, hp_generator, star_involution

__all__ = [
    "BasisClosureError",
    "ChannelError",
    "TrajectoryDivergedError",
    "NonPositiveWeightError",
    "gell_mann_basis",
    "ObservationChannel",
    "SystemModel",
    "FilterState",
    "GainSolveReport",
    "InitialBranch",
    "LinearTrajectory",
    "drift_term",
    "correlation_matrix",
    "gain_solve",
    "innovation_compensator",
    "martingale_condition",
    "update_diffusive",
    "step_diffusive",
    "step_counting",
    "linear_step",
    "run_linear_dual",
    "initial_condition",
    "project_physical",
    "purity",
]

INTENSITY_FLOOR = 1e-12
GAIN_FLOOR = 1e-12
DIVERGENCE_RADIUS = 1.1


class BasisClosureError(ValueError):
    pass


class ChannelError(ValueError):
    pass


class TrajectoryDivergedError(RuntimeError):
    pass


class NonPositiveWeightError(RuntimeError):
    pass


def gell_mann_basis(d: int) -> np.ndarray:
    """Identity followed by the generalized Gell-Mann matrices.

    For ``d = 2`` this is ``I, sigma_x, sigma_y, sigma_z``.
    """
    out = [np.eye(d, dtype=complex)]
    for j in range(d):
        for k in range(j + 1, d):
            s = np.zeros((d, d), dtype=complex)
            s[j, k] = s[k, j] = 1.0
            a = np.zeros((d, d), dtype=complex)
            a[j, k] = -1j
            a[k, j] = 1j
            out += [s, a]
    for ell in range(1, d):
        diag = np.zeros(d)
        diag[:ell] = 1.0
        diag[ell] = -ell
        out.append(np.diag(diag * math.sqrt(2.0 / (ell * (ell + 1)))).astype(complex))
    return np.array(out)


@dataclass(frozen=True, eq=False)
class ObservationChannel:
    """One observed output.

    ``D`` is a scalar generator-form star-matrix: ``D^-_k = D^k_+ = 1`` for
    the quadrature of channel ``k`` and ``D^k_k = 1`` for photon counting.
    """

    kind: str
    D: StarMatrix
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("diffusive", "counting"):
            raise ChannelError(f"unknown channel kind {self.kind!r}")
        if self.D.ring != "scalar":
            raise ChannelError("observation matrices have scalar entries")
        if not star_involution(self.D).allclose(self.D, 1e-12):
            raise ChannelError("observation matrix must be star-selfadjoint")

    @classmethod
    def diffusive(cls, k: int = 1, m: int = 1, phase: float = 0.0) -> ObservationChannel:
        z = complex(np.exp(1j * phase))
        D = StarMatrix.from_entries(m, {("-", k): z, (k, "+"): z.conjugate()}, shape=GENERATOR)
        return cls("diffusive", D, f"Q{k}")

    @classmethod
    def counting(cls, k: int = 1, m: int = 1) -> ObservationChannel:
        D = StarMatrix.from_entries(m, {(k, k): 1.0}, shape=GENERATOR)
        return cls("counting", D, f"N{k}")

    def key(self):
        return (self.kind, self.D.entries.tobytes())


def _as_callable(x):
    if callable(x):
        return x, True
    arr = np.asarray(x, dtype=complex)
    return (lambda t: arr), False


class SystemModel:
    """Hamiltonian, coupling operators and observable basis of the system.

    Parameters
    ----------
    H : array_like or callable
        Hermitian ``d x d`` matrix, or ``t -> matrix``.
    Ls : sequence
        One coupling operator (or callable of ``t``) per noise channel.
    basis : array_like, optional
        Hermitian operators with the identity first.  Defaults to
        :func:`gell_mann_basis`.
    """

    def __init__(self, H, Ls: Sequence, basis=None):
        self._H, h_td = _as_callable(H)
        pairs = [_as_callable(L) for L in Ls]
        if not pairs:
            raise ValueError("need at least one coupling operator")
        self._Ls = [p[0] for p in pairs]
        self.time_dependent = h_td or any(p[1] for p in pairs)
        H0 = self.hamiltonian(0.0)
        self.d = H0.shape[0]
        self.n_ch = len(self._Ls)
        basis = gell_mann_basis(self.d) if basis is None else np.asarray(basis, dtype=complex)
        if basis.ndim != 3 or basis.shape[1:] != (self.d, self.d):
            raise ValueError("basis must be a stack of d x d matrices")
        if np.linalg.norm(basis[0] - np.eye(self.d)) > 1e-12:
            raise ValueError("the first basis element must be the identity")
        for X in basis:
            if np.linalg.norm(X - X.conj().T) > 1e-12:
                raise ValueError("basis elements must be Hermitian")
        self.basis = basis
        self.gram = np.einsum("aij,bji->ab", basis, basis).real
        if np.linalg.cond(self.gram) > 1e10:
            raise ValueError("basis is not linearly independent")
        diag = np.diag(self.gram)
        self._orthogonal = np.allclose(self.gram, np.diag(diag), atol=0)
        self._gram_inv = np.diag(1.0 / diag) if self._orthogonal else np.linalg.inv(self.gram)
        self._cache: dict = {}
        # fails here, not mid-run, if the basis does not close under the drift
        self.tensors(())

    @property
    def n_basis(self) -> int:
        return self.basis.shape[0]

    def hamiltonian(self, t: float) -> np.ndarray:
        H = np.asarray(self._H(t), dtype=complex)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError("H must be square")
        if np.linalg.norm(H - H.conj().T) > 1e-12:
            raise ValueError("H must be Hermitian")
        return H

    def couplings(self, t: float) -> list[np.ndarray]:
        return [np.asarray(L(t), dtype=complex) for L in self._Ls]

    def generator(self, t: float) -> StarMatrix:
        return hp_generator(self.hamiltonian(t), self.couplings(t))

    # basis algebra ------------------------------------------------------------

    def coeffs(self, O: np.ndarray, name: str = "operator") -> np.ndarray:
        """Coefficients ``c`` with ``O = sum_a c_a X_a``.

        Raises :class:`BasisClosureError` if ``O`` is outside the span.
        """
        O = np.asarray(O, dtype=complex)
        proj = np.einsum("aij,ji->a", self.basis, O)
        if self._orthogonal:
            c = proj / np.diag(self.gram)
        else:
            c = self._gram_inv @ proj
        resid = np.linalg.norm(np.einsum("a,aij->ij", c, self.basis) - O)
        if resid > 1e-9 * max(1.0, np.linalg.norm(O)):
            raise BasisClosureError(f"{name} is not in the span of the basis (residual {resid:.3g})")
        return c

    def expectations(self, rho: np.ndarray) -> np.ndarray:
        """``e_a = tr(rho X_a)``."""
        return np.einsum("...ij,aji->...a", rho, self.basis).real

    def density(self, e: np.ndarray) -> np.ndarray:
        c = np.asarray(e) @ self._gram_inv.T
        return np.einsum("...a,aij->...ij", c, self.basis)

    def expect(self, e: np.ndarray, O: np.ndarray) -> np.ndarray:
        return np.asarray(e) @ self.coeffs(O)

    # coefficient tensors -----------------------------------------------------

    def _real(self, c: np.ndarray, what: str) -> np.ndarray:
        if np.max(np.abs(c.imag), initial=0.0) > 1e-9 * max(1.0, np.max(np.abs(c), initial=0.0)):
            raise ChannelError(f"{what} is not Hermitian; channels must commute and be star-selfadjoint")
        return c.real

    def drift_increment(self, e: np.ndarray, dt: float, t: float = 0.0, exact: bool = False) -> np.ndarray:
        """Innovation-free change of ``e`` over one step.

        ``exact`` uses the flow ``expm(A dt)`` of the unconditional master
        equation instead of ``A e dt``.
        """
        A = self.tensors((), t).A
        if not exact:
            return (e @ A.T) * dt
        key = ("flow", float(dt))
        P = None if self.time_dependent else self._cache.get(key)
        if P is None:
            P = scipy.linalg.expm(A * dt) - np.eye(self.n_basis)
            if not self.time_dependent:
                self._cache[key] = P
        return e @ P.T

    def tensors(self, channels: Sequence[ObservationChannel] = (), t: float = 0.0) -> _Tensors:
        key = tuple(ch.key() for ch in channels)
        if not self.time_dependent and key in self._cache:
            return self._cache[key]
        tens = _build_tensors(self, channels, t)
        if not self.time_dependent:
            self._cache[key] = tens
        return tens


@dataclass(frozen=True)
class _Tensors:
    A: np.ndarray      # (n, n) drift: d e_a = A[a] . e dt
    R: np.ndarray      # (c, n) compensators: eps(R_i) = R[i] . e
    Rho: np.ndarray    # (c, c, n) correlation matrix coefficients
    B: np.ndarray      # (c, n, n) eps((Z* D_i* (X_a (x) delta) Z)^-_+) = B[i, a] . e
    cov: np.ndarray    # (c, c) quadratic covariation of the outputs
    kinds: tuple


def _corner(M: StarMatrix) -> np.ndarray:
    return M.entries[0, M.m + 1]


def _delta(X: np.ndarray, m: int) -> StarMatrix:
    return StarMatrix(np.einsum("ij,ab->ijab", np.eye(m + 2), X), GENERATOR)


def _build_tensors(model: SystemModel, channels: Sequence[ObservationChannel], t: float) -> _Tensors:
    Z = model.generator(t)
    Zs = star_involution(Z)
    m, d, n = model.n_ch, model.d, model.n_basis
    Xd = [_delta(X, m) for X in model.basis]
    A = np.array([model.coeffs(_corner(Zs @ Xa @ Z), f"generator image of basis element {a}")
                  for a, Xa in enumerate(Xd)])
    A = model._real(A, "drift")
    Ds = []
    for ch in channels:
        if ch.D.m != m:
            raise ChannelError(f"channel {ch.label} has m={ch.D.m}, model has {m} couplings")
        Ds.append(ch.D.promote(d))
    for i in range(len(Ds)):
        for k in range(i + 1, len(Ds)):
            if (Ds[i] @ Ds[k] - Ds[k] @ Ds[i]).norm() > 1e-12:
                raise ChannelError(f"channels {i} and {k} do not commute")
    c = len(Ds)
    R = np.zeros((c, n))
    Rho = np.zeros((c, c, n))
    B = np.zeros((c, n, n))
    cov = np.zeros((c, c))
    for i, Di in enumerate(Ds):
        Dis = star_involution(Di)
        R[i] = model._real(model.coeffs(_corner(Zs @ Di @ Z), "compensator"), "compensator")
        left = Zs @ Dis
        for a, Xa in enumerate(Xd):
            B[i, a] = model._real(model.coeffs(_corner(left @ Xa @ Z), "gain term"), "gain term")
        for k, Dk in enumerate(Ds):
            Rho[i, k] = model._real(model.coeffs(_corner(left @ Dk @ Z), "correlation"), "correlation")
            cov[i, k] = (star_involution(channels[i].D) @ channels[k].D).entries[0, m + 1].real
    return _Tensors(A, R, Rho, B, cov, tuple(ch.kind for ch in channels))


# state containers ---------------------------------------------------------------


@dataclass
class FilterState:
    """A-posteriori means ``e`` (basis order), normalization weight and time."""

    e: np.ndarray
    rho_weight: np.ndarray | float = 1.0
    t: float = 0.0

    def __post_init__(self):
        self.e = np.asarray(self.e, dtype=float)

    def copy(self) -> FilterState:
        return FilterState(self.e.copy(), np.copy(self.rho_weight), self.t)


@dataclass
class GainSolveReport:
    varrho: np.ndarray
    kappa: np.ndarray
    rank: np.ndarray
    regularization: np.ndarray
    active: np.ndarray | None = None
    pinv: np.ndarray | None = None


@dataclass
class InitialBranch:
    probability: float
    state: FilterState
    values: tuple
    linear_estimate: np.ndarray | None = None
    report: GainSolveReport | None = None


@dataclass
class LinearTrajectory:
    """Unnormalized filter ``f`` (basis order); ``rho = f[..., 0]``."""

    t: np.ndarray
    f: np.ndarray

    @property
    def rho(self) -> np.ndarray:
        return self.f[..., 0]

    def normalized(self) -> np.ndarray:
        return self.f / self.rho[..., None]


# filter quantities --------------------------------------------------------------


def drift_term(model: SystemModel, state: FilterState, t: float | None = None) -> np.ndarray:
    """Innovation-free rate of change of every basis expectation."""
    tens = model.tensors((), state.t if t is None else t)
    return state.e @ tens.A.T


def innovation_compensator(model, channels, state) -> np.ndarray:
    """``eps((Z* D_i Z)^-_+)`` per channel: the predictable part of ``dY_i / dt``."""
    return state.e @ model.tensors(channels, state.t).R.T


def correlation_matrix(model, channels, state) -> np.ndarray:
    """``varrho_ik = eps((Z* D_i* D_k Z)^-_+)``."""
    tens = model.tensors(channels, state.t)
    return np.einsum("ikb,...b->...ik", tens.Rho, state.e)


def martingale_condition(model: SystemModel, D: StarMatrix, state: FilterState) -> np.ndarray:
    """``eps((Z* D Z)^-_+)``: zero iff ``int (Z* D Z) dA`` is a martingale."""
    Z = model.generator(state.t)
    M = _corner(star_involution(Z) @ D.promote(model.d) @ Z)
    return state.e @ model.coeffs(M, "martingale term")



def _gain_from(tens: _Tensors, e: np.ndarray) -> GainSolveReport:
    varrho = np.einsum("ikb,...b->...ik", tens.Rho, e)
    comp = e @ tens.R.T
    rhs = np.einsum("iab,...b->...ia", tens.B, e) - comp[..., :, None] * e[..., None, :]
    w, V = np.linalg.eigh(varrho)
    tr = np.trace(varrho, axis1=-2, axis2=-1)
    floor = GAIN_FLOOR * np.abs(tr)
    keep = w > floor[..., None]
    inv = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    pinv = np.einsum("...ij,...j,...kj->...ik", V, inv, V)
    kappa = pinv @ rhs
    active = np.diagonal(varrho, axis1=-2, axis2=-1) > INTENSITY_FLOOR
    return GainSolveReport(varrho, kappa, keep.sum(axis=-1), floor, active, pinv)


def gain_solve(model: SystemModel, channels, state: FilterState, X=None) -> GainSolveReport:
    """Solve ``varrho kappa = rhs`` for the filter gains.

    ``rhs_i(X) = eps((Z* D_i* (X (x) delta) Z)^-_+) - eps(X) eps((Z* D_i Z)^-_+)``.
    Eigenvalues of ``varrho`` at or below ``1e-12 * trace`` are treated as
    zero and the minimum-norm solution is returned.  ``kappa`` has shape
    ``(..., n_channels, n_basis)``, or ``(..., n_channels)`` when ``X`` (an
    operator or a basis index) is given.
    """
    rep = _gain_from(model.tensors(channels, state.t), state.e)
    if X is None:
        return rep
    c = np.eye(model.n_basis)[X] if isinstance(X, (int, np.integer)) else model._real(
        model.coeffs(X), "observable")
    rep.kappa = rep.kappa @ c
    return rep


def purity(model: SystemModel, e: np.ndarray) -> np.ndarray:
    """``(d tr(rho^2) - 1) / (d - 1)``; equals ``|p|^2`` for a spin."""
    e = np.asarray(e)
    tr2 = np.einsum("...a,ab,...b->...", e, model._gram_inv, e)
    d = model.d
    return (d * tr2 - 1.0) / (d - 1)


def project_physical(model: SystemModel, e: np.ndarray) -> np.ndarray:
    """Nearest state with unit trace and nonnegative spectrum (eigenvalue clipping)."""
    e = np.array(e, dtype=float)
    e[..., 0] = 1.0
    rho = model.density(e)
    w, V = np.linalg.eigh(rho)
    if np.all(w >= 0):
        return e
    w = np.clip(w, 0.0, None)
    w = w / w.sum(axis=-1, keepdims=True)
    rho = np.einsum("...ij,...j,...kj->...ik", V, w, V.conj())
    return model.expectations(rho)


def _check_divergence(model, e):
    p2 = purity(model, e)
    bad = p2 > DIVERGENCE_RADIUS**2
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad)).ravel().tolist()
        raise TrajectoryDivergedError(
            f"state left the physical set by more than 10% (trajectories {idx[:10]})")


def update_diffusive(model: SystemModel, channels, state: FilterState, dY, dt: float,
                     project: bool = False, check: bool = True, scheme: str = "euler",
                     drift: str = "euler") -> tuple[FilterState, np.ndarray]:
    """One filter step driven by observed increments ``dY``.

    ``scheme="euler"`` (default) is Euler-Maruyama.  ``scheme="milstein"`` adds
    ``(1/2) sum_ij Dkappa_i[kappa_j] (dI_i dI_j - cov_ij dt)`` for the
    innovations ``dI``, with ``varrho`` frozen at the start of the step (the
    iterated integrals of distinct channels are approximated by products).
    ``drift="exact"`` replaces ``A e dt`` by the exact unconditional flow
    over the step.  Returns the new state and the innovations
    ``dY - eps(R) dt``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    tens = model.tensors(channels, state.t)
    if any(k != "diffusive" for k in tens.kinds):
        raise ChannelError("update_diffusive takes diffusive channels only")
    e = state.e
    dY = np.asarray(dY, dtype=float)
    innov = dY - (e @ tens.R.T) * dt
    rep = _gain_from(tens, e)
    gain = rep.kappa
    if drift not in ("euler", "exact"):
        raise ValueError(f"unknown drift integration {drift!r}")
    new = e + model.drift_increment(e, dt, state.t, drift == "exact") + np.einsum("...i,...ia->...a", innov, gain)
    if scheme == "milstein":
        # directional derivative of kappa_k along kappa_j, then mixed with pinv(varrho)
        Bk = np.einsum("kab,...jb->...kja", tens.B, gain)
        comp = e @ tens.R.T
        Rk = np.einsum("kb,...jb->...kj", tens.R, gain)
        raw = Bk - gain[..., None, :, :] * comp[..., :, None, None] - Rk[..., None] * e[..., None, None, :]
        dk = np.einsum("...ik,...kja->...ija", rep.pinv, raw)
        w = innov[..., :, None] * innov[..., None, :] - tens.cov * dt
        new = new + 0.5 * np.einsum("...ij,...ija->...a", w, dk)
    elif scheme != "euler":
        raise ValueError(f"unknown scheme {scheme!r}")
    if project:
        new = project_physical(model, new)
    if check:
        _check_divergence(model, new)
    return FilterState(new, state.rho_weight, state.t + dt), innov


def step_diffusive(model: SystemModel, channels, state: FilterState, dW, dt: float,
                   project: bool = False, check: bool = True, scheme: str = "euler",
                   drift: str = "euler") -> tuple[FilterState, np.ndarray]:
    """One step under the filter's own measure.

    The innovations are the supplied Wiener increments ``dW``; the emitted
    observation is ``dY = eps(R) dt + dW``.
    """
    tens = model.tensors(channels, state.t)
    dY = (state.e @ tens.R.T) * dt + np.asarray(dW, dtype=float)
    new, _ = update_diffusive(model, channels, state, dY, dt, project, check, scheme, drift)
    return new, dY


def step_counting(model: SystemModel, channel, state: FilterState, uniform_draw, dt: float
                  ) -> tuple[FilterState, np.ndarray]:
    """One thinning step of a photon-counting channel.

    A jump happens iff ``uniform_draw < intensity * dt`` with
    ``intensity = eps(L^+ L)``.  On a jump the state is reset to
    ``eps(L^+ X L) / eps(L^+ L)``; otherwise it follows the drift minus the
    compensator ``kappa * intensity``.  Channels whose intensity is below
    ``1e-12`` cannot jump.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    channels = [channel] if isinstance(channel, ObservationChannel) else list(channel)
    if len(channels) != 1 or channels[0].kind != "counting":
        raise ChannelError("step_counting takes one counting channel")
    tens = model.tensors(channels, state.t)
    e = state.e
    intensity = e @ tens.R[0]
    if np.any(intensity * dt > 0.1):
        warnings.warn("intensity * dt exceeds 0.1; dt is too coarse for thinning", RuntimeWarning)
    active = intensity > INTENSITY_FLOOR
    jump = (np.asarray(uniform_draw) < intensity * dt) & active
    safe = np.where(active, intensity, 1.0)
    jumped = (e @ tens.B[0].T) / safe[..., None]
    # kappa * intensity = eps(L+ X L) - eps(X) eps(L+ L)
    comp = np.where(active[..., None], e @ tens.B[0].T - e * intensity[..., None], 0.0)
    flowed = e + (e @ tens.A.T - comp) * dt
    new = np.where(jump[..., None], jumped, flowed)
    return FilterState(new, state.rho_weight, state.t + dt), jump


# linear (unnormalized) filter ---------------------------------------------------


def linear_step(model: SystemModel, channels, f: np.ndarray, dY, dt: float, t: float = 0.0,
                scheme: str = "euler") -> np.ndarray:
    """One step of ``df = A f dt + sum_i B_i f dY_i`` for the unnormalized means.

    The identity component of ``f`` is the weight ``rho``.  ``scheme`` is
    ``"euler"`` or ``"milstein"``; the latter adds
    ``(1/2) sum_ik B_i B_k f (dY_i dY_k - cov_ik dt)``.
    """
    tens = model.tensors(channels, t)
    if any(k != "diffusive" for k in tens.kinds):
        raise ChannelError("the linear filter is implemented for diffusive channels only")
    dY = np.asarray(dY, dtype=float)
    Bf = np.einsum("iab,...b->...ia", tens.B, f)
    new = f + (f @ tens.A.T) * dt + np.einsum("...i,...ia->...a", dY, Bf)
    if scheme == "milstein":
        BBf = np.einsum("kab,...ib->...kia", tens.B, Bf)
        w = dY[..., :, None] * dY[..., None, :] - tens.cov * dt
        new = new + 0.5 * np.einsum("...ik,...kia->...a", w, BBf)
    elif scheme != "euler":
        raise ValueError(f"unknown scheme {scheme!r}")
    return new


def run_linear_dual(model: SystemModel, channels, initial, dY, dt: float, t0: float = 0.0,
                    scheme: str = "euler", stride: int = 1) -> LinearTrajectory:
    """Integrate the linear filter over an observation record.

    Parameters
    ----------
    initial : FilterState or array_like
        Normalized initial means; ``f(0) = e(0)`` so ``rho(0) = 1``.
    dY : array_like, shape (n_steps, ..., n_channels)
        Observation increments.
    stride : int
        Store every ``stride``-th point (the final point is always stored).
    """
    f = np.array(initial.e if isinstance(initial, FilterState) else initial, dtype=float)
    dY = np.asarray(dY, dtype=float)
    n = dY.shape[0]
    f = np.broadcast_to(f, dY.shape[1:-1] + f.shape[-1:]).copy()
    ts, fs = [t0], [f.copy()]
    for j in range(n):
        t = t0 + j * dt
        f = linear_step(model, channels, f, dY[j], dt, t, scheme)
        if np.any(f[..., 0] <= 0):
            raise NonPositiveWeightError(f"normalization weight reached {f[..., 0].min():.3g} at t={t + dt:.6g}")
        if (j + 1) % stride == 0 or j == n - 1:
            ts.append(t0 + (j + 1) * dt)
            fs.append(f.copy())
    return LinearTrajectory(np.array(ts), np.array(fs))


# initial conditioning -----------------------------------------------------------


def initial_condition(model: SystemModel, psi, y_hat: Sequence = (), tol: float = 1e-10
                      ) -> list[InitialBranch]:
    """Condition the initial state on commuting initial observables.

    Each joint eigenvalue ``v`` of ``y_hat`` with nonzero probability gives
    a branch whose means are those of ``P_v psi / ||P_v psi||``.  Alongside,
    the linear estimate ``<X> + kappa^i(X) (v_i - <y_i>)`` with
    ``varrho_ik kappa^k = Re <psi| y~_i x~ psi>`` is reported; it agrees with
    the branch means for observables that are functions of ``y_hat``.
    """
    psi = np.asarray(psi, dtype=complex).ravel()
    psi = psi / np.linalg.norm(psi)
    rho0 = np.outer(psi, psi.conj())
    base = model.expectations(rho0)
    ys = [np.asarray(y, dtype=complex) for y in y_hat]
    if not ys:
        return [InitialBranch(1.0, FilterState(base), ())]
    for i in range(len(ys)):
        if np.linalg.norm(ys[i] - ys[i].conj().T) > tol:
            raise ValueError(f"initial observable {i} is not Hermitian")
        for k in range(i + 1, len(ys)):
            if np.linalg.norm(ys[i] @ ys[k] - ys[k] @ ys[i]) > tol:
                raise NonCommutingError(f"initial observables {i} and {k} do not commute")
    means = np.array([np.vdot(psi, y @ psi).real for y in ys])
    yt = [y - mu * np.eye(model.d) for y, mu in zip(ys, means)]
    varrho = np.array([[np.vdot(psi, a @ b @ psi).real for b in yt] for a in yt])
    xt = model.basis - base[:, None, None] * np.eye(model.d)
    rhs = np.array([[np.vdot(psi, a @ x @ psi).real for x in xt] for a in yt])
    w, V = np.linalg.eigh(varrho)
    floor = GAIN_FLOOR * abs(np.trace(varrho))
    keep = w > floor
    inv = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    kappa = (V * inv) @ V.T @ rhs
    report = GainSolveReport(varrho, kappa, int(keep.sum()), floor)
    branches = []
    for vals, Vb in joint_spectral_decomposition(ys, model.d, tol=1e-9):
        proj = Vb @ (Vb.conj().T @ psi)
        prob = float(np.vdot(proj, proj).real)
        if prob <= 1e-14:
            continue
        post = proj / math.sqrt(prob)
        e = model.expectations(np.outer(post, post.conj()))
        linear = base + (np.asarray(vals) - means) @ kappa
        branches.append(InitialBranch(prob, FilterState(e), tuple(vals), linear, report))
    return branches
