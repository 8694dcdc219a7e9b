"""Time-bin lattice realization of the quantum noise.

The noise is discretized into ``n_bins`` bins of width ``dt``.  Each bin
carries one truncated oscillator (levels 0..q) per channel, and the whole
lattice is tensored with a ``d_sys``-dimensional system space.  Tensor factor
order is ``system, bin 0, bin 1, ...`` and inside a bin the channels are in
order 1..m.

Increments on bin ``b`` are ``dA_k = sqrt(dt) a_k``, ``dA_k^+ = sqrt(dt) a_k^+``,
``dN^k_i = a_i^+ a_k`` and ``dt * I``.
"""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .starmatrix import (
    DEFAULT_TOL,
    GENERATOR,
    INPUT,
    StarMatrix,
    StarMatrixError,
    hp_components,
    star_residuals,
)

__all__ = [
    "DEFAULT_DIM_CAP",
    "DEFAULT_DENSE_CAP",
    "DimensionCapError",
    "AdaptednessError",
    "NotStarUnitaryError",
    "NonCommutingError",
    "NoiseLattice",
    "LatticeVector",
    "LatticeOperator",
    "ObservationProcess",
    "NondemolitionReport",
    "OracleOutcome",
    "OracleTable",
    "basic_increment",
    "ito_sum_integral",
    "bin_propagator",
    "unitary_cocycle",
    "evolve_vector",
    "output_process",
    "nondemolition_residual",
    "joint_spectral_decomposition",
    "conditional_expectation_oracle",
]

DEFAULT_DIM_CAP = 2**20
DEFAULT_DENSE_CAP = 2**12
CLUSTER_TOL = 1e-9
ZERO_PROB = 1e-14


class DimensionCapError(ValueError):
    pass


class AdaptednessError(ValueError):
    pass


class NotStarUnitaryError(ValueError):
    pass


class NonCommutingError(ValueError):
    pass


def _env_int(name: str, default: int) -> int:
    value = os.environ.get(name)
    return int(value) if value else default


def _destroy(q: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, q + 1, dtype=float)), 1).astype(complex)


class NoiseLattice:
    """Truncated time-bin Fock lattice tensored with the system space.

    Parameters
    ----------
    n_bins : int
        Number of time bins.
    dt : float
        Bin width.
    q : int
        Highest occupation number kept per bin and channel.
    m : int
        Number of noise channels.
    d_sys : int
        System dimension.
    dim_cap : int, optional
        Largest admissible ``total_dim``.  Defaults to ``QSFILTER_DIM_CAP``
        from the environment, else ``2**20``.
    """

    def __init__(self, n_bins: int, dt: float, q: int = 1, m: int = 1, d_sys: int = 2,
                 dim_cap: int | None = None):
        if n_bins < 0 or q < 1 or m < 1 or d_sys < 1:
            raise ValueError("need n_bins >= 0, q >= 1, m >= 1, d_sys >= 1")
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.n_bins = int(n_bins)
        self.dt = float(dt)
        self.q = int(q)
        self.m = int(m)
        self.d_sys = int(d_sys)
        self.bin_dim = (q + 1) ** m
        self.total_dim = d_sys * self.bin_dim**n_bins
        cap = _env_int("QSFILTER_DIM_CAP", DEFAULT_DIM_CAP) if dim_cap is None else dim_cap
        if self.total_dim > cap:
            raise DimensionCapError(f"lattice dimension {self.total_dim} exceeds cap {cap}")
        self.dims = (self.d_sys,) + (self.bin_dim,) * self.n_bins
        a = _destroy(q)
        eye = np.eye(q + 1)
        ops = []
        for k in range(m):
            factors = [eye] * m
            factors[k] = a
            op = factors[0]
            for f in factors[1:]:
                op = np.kron(op, f)
            ops.append(op)
        self._a = ops

    def __repr__(self) -> str:
        return (f"NoiseLattice(n_bins={self.n_bins}, dt={self.dt}, q={self.q}, m={self.m}, "
                f"d_sys={self.d_sys})")

    def boundaries(self) -> np.ndarray:
        return self.dt * np.arange(self.n_bins + 1)

    # local operators on one bin --------------------------------------------

    def annihilator(self, k: int) -> np.ndarray:
        """Bin-local ``a_k`` (channel ``k`` counted from 1)."""
        if not 1 <= k <= self.m:
            raise IndexError(f"channel {k} out of range 1..{self.m}")
        return self._a[k - 1]

    def local_increment(self, c: StarMatrix, system: bool = True) -> np.ndarray:
        """``c^mu_nu dA^nu_mu`` on the ``system (x) bin`` factor.

        With ``system=False`` the matrix must have scalar entries and the
        result acts on the bin alone.  Only the input-form part of ``c``
        contributes, so the corner entries of a generator-form matrix are
        ignored.
        """
        if c.m != self.m:
            raise StarMatrixError(f"matrix has m={c.m}, lattice has m={self.m}")
        d = self.d_sys if system else 1
        if not system and c.ring != "scalar":
            raise StarMatrixError("bin-only increments need scalar entries")
        c = c.promote(d) if c.ring == "scalar" else c
        if c.d != d:
            raise StarMatrixError(f"operator entries of size {c.d} on a d_sys={self.d_sys} lattice")
        e = c.entries
        m, f = self.m, self.bin_dim
        rt = np.sqrt(self.dt)
        eye_b = np.eye(f)
        out = np.kron(e[0, m + 1], eye_b) * self.dt
        for k in range(1, m + 1):
            a = self._a[k - 1]
            out = out + rt * np.kron(e[0, k], a) + rt * np.kron(e[k, m + 1], a.conj().T)
            for i in range(1, m + 1):
                if np.any(e[i, k]):
                    out = out + np.kron(e[i, k], self._a[i - 1].conj().T @ a)
        return out

    # embedding and application ------------------------------------------------

    def _sites(self, bins: Sequence[int], system: bool) -> list[int]:
        for b in bins:
            if not 0 <= b < self.n_bins:
                raise IndexError(f"bin {b} out of range 0..{self.n_bins - 1}")
        return ([0] if system else []) + [b + 1 for b in bins]

    def apply_local(self, vectors: np.ndarray, op: np.ndarray, bins: Sequence[int] = (),
                    system: bool = True) -> np.ndarray:
        """Apply a local operator to vectors of shape ``(total_dim, ...)``.

        ``op`` acts on ``system`` (if set) followed by the listed bins.
        """
        sites = self._sites(bins, system)
        vectors = np.asarray(vectors)
        extra = vectors.shape[1:]
        t = vectors.reshape(self.dims + extra)
        local_dims = [self.dims[s] for s in sites]
        n_loc = int(np.prod(local_dims))
        if op.shape != (n_loc, n_loc):
            raise ValueError(f"local operator has shape {op.shape}, expected {(n_loc, n_loc)}")
        opt = op.reshape(local_dims * 2)
        nl = len(sites)
        res = np.tensordot(opt, t, axes=(list(range(nl, 2 * nl)), sites))
        res = np.moveaxis(res, list(range(nl)), sites)
        return res.reshape(vectors.shape)

    def _require_dense(self):
        cap = _env_int("QSFILTER_DENSE_CAP", DEFAULT_DENSE_CAP)
        if self.total_dim > cap:
            raise DimensionCapError(
                f"dense operators of dimension {self.total_dim} exceed cap {cap}")

    def embed(self, op: np.ndarray, bins: Sequence[int] = (), system: bool = True,
              horizon: int | None = None) -> LatticeOperator:
        """Dense lattice operator of a local operator (identity elsewhere)."""
        self._require_dense()
        mat = self.apply_local(np.eye(self.total_dim, dtype=complex), op, bins, system)
        if horizon is None:
            horizon = max(bins) if bins else -1
        return LatticeOperator(self, mat, horizon)

    def identity(self) -> LatticeOperator:
        self._require_dense()
        return LatticeOperator(self, np.eye(self.total_dim, dtype=complex), -1)

    def system_operator(self, x) -> LatticeOperator:
        return self.embed(np.asarray(x, dtype=complex), (), True)

    def vacuum(self, psi) -> LatticeVector:
        """``psi (x) vacuum``."""
        psi = np.asarray(psi, dtype=complex).ravel()
        if psi.shape != (self.d_sys,):
            raise ValueError(f"system vector must have length {self.d_sys}")
        amp = np.zeros(self.total_dim, dtype=complex)
        stride = self.total_dim // self.d_sys
        amp[::stride] = psi
        return LatticeVector(self, amp)


@dataclass(frozen=True)
class LatticeVector:
    lattice: NoiseLattice
    amplitudes: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.amplitudes)):
            raise ValueError("non-finite amplitudes")

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def inner(self, other: LatticeVector) -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True, eq=False)
class LatticeOperator:
    """Dense operator on the lattice.

    ``horizon`` is the last bin the operator acts on non-trivially
    (``-1`` for system-only operators, ``None`` when unknown).
    """

    lattice: NoiseLattice
    matrix: np.ndarray
    horizon: int | None = None

    def __matmul__(self, other):
        if isinstance(other, LatticeOperator):
            return LatticeOperator(self.lattice, self.matrix @ other.matrix,
                                   _max_horizon(self.horizon, other.horizon))
        if isinstance(other, LatticeVector):
            return LatticeVector(self.lattice, self.matrix @ other.amplitudes)
        return self.matrix @ other

    def __add__(self, other: LatticeOperator) -> LatticeOperator:
        return LatticeOperator(self.lattice, self.matrix + other.matrix,
                               _max_horizon(self.horizon, other.horizon))

    def __sub__(self, other: LatticeOperator) -> LatticeOperator:
        return LatticeOperator(self.lattice, self.matrix - other.matrix,
                               _max_horizon(self.horizon, other.horizon))

    def __mul__(self, scalar) -> LatticeOperator:
        return LatticeOperator(self.lattice, complex(scalar) * self.matrix, self.horizon)

    __rmul__ = __mul__

    def dagger(self) -> LatticeOperator:
        return LatticeOperator(self.lattice, self.matrix.conj().T, self.horizon)

    def expectation(self, vec: LatticeVector) -> complex:
        return complex(np.vdot(vec.amplitudes, self.matrix @ vec.amplitudes))

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix))

    def adaptedness_residual(self, h: int) -> float:
        """Distance of the matrix from ``C_past (x) I`` on bins after ``h``."""
        return _factor_residual(self.lattice, self.matrix, h)


def _max_horizon(a, b):
    if a is None or b is None:
        return None
    return max(a, b)


def _factor_residual(lattice: NoiseLattice, mat: np.ndarray, h: int) -> float:
    p = lattice.d_sys * lattice.bin_dim ** (h + 1)
    qd = lattice.total_dim // p
    t = mat.reshape(p, qd, p, qd)
    past = np.einsum("ajbj->ab", t) / qd
    rebuilt = np.einsum("ab,jk->ajbk", past, np.eye(qd))
    return float(np.linalg.norm((t - rebuilt).ravel()))


# basic processes ------------------------------------------------------------------


def basic_increment(lattice: NoiseLattice, kind: str, bin: int, k: int = 1,
                    i: int | None = None) -> LatticeOperator:
    """Increment of a basic process on one bin.

    Parameters
    ----------
    kind : {"annihilation", "creation", "number", "time"}
        ``annihilation`` is ``dA_k``, ``creation`` is ``dA_k^+``, ``number``
        is ``dN^k_i = a_i^+ a_k`` (``i`` defaults to ``k``) and ``time`` is
        ``dt * I``.
    """
    if not 0 <= bin < lattice.n_bins:
        raise IndexError(f"bin {bin} out of range 0..{lattice.n_bins - 1}")
    rt = np.sqrt(lattice.dt)
    if kind == "time":
        op = lattice.dt * np.eye(lattice.bin_dim)
    elif kind == "annihilation":
        op = rt * lattice.annihilator(k)
    elif kind == "creation":
        op = rt * lattice.annihilator(k).conj().T
    elif kind == "number":
        i = k if i is None else i
        op = lattice.annihilator(i).conj().T @ lattice.annihilator(k)
    else:
        raise ValueError(f"unknown increment kind {kind!r}")
    return lattice.embed(op, [bin], system=False, horizon=bin)


def _as_schedule(lattice: NoiseLattice, sched) -> list:
    if isinstance(sched, StarMatrix):
        return [sched] * lattice.n_bins
    if callable(sched):
        return [sched(b * lattice.dt) for b in range(lattice.n_bins)]
    sched = list(sched)
    if len(sched) != lattice.n_bins:
        raise ValueError(f"need {lattice.n_bins} per-bin matrices, got {len(sched)}")
    return sched


def ito_sum_integral(lattice: NoiseLattice, coeffs, tol: float = 1e-10) -> LatticeOperator:
    """Ito sum ``sum_b C^mu_nu(b) dA^nu_mu(b)`` over all bins.

    Coefficients are StarMatrix objects whose entries are either system
    operators (``d_sys x d_sys``) or full lattice operators
    (``total_dim x total_dim``).  Lattice-operator coefficients at bin ``b``
    must act trivially on bins ``b, b+1, ...``.
    """
    lattice._require_dense()
    total = np.zeros((lattice.total_dim, lattice.total_dim), dtype=complex)
    sched = _as_schedule(lattice, coeffs)
    m = lattice.m
    for b, c in enumerate(sched):
        if c.ring == "scalar" or c.d == lattice.d_sys:
            total += lattice.embed(lattice.local_increment(c), [b]).matrix
            continue
        if c.d != lattice.total_dim:
            raise StarMatrixError(f"coefficient entries of size {c.d} fit neither system nor lattice")
        e = c.entries
        mask = np.ones((m + 2, m + 2), dtype=bool)
        mask[m + 1, :] = False
        mask[:, 0] = False
        for mu, nu in zip(*np.nonzero(mask)):
            entry = e[mu, nu]
            if not np.any(entry):
                continue
            r = _factor_residual(lattice, entry, b - 1)
            if r > tol * max(1.0, np.linalg.norm(entry)):
                raise AdaptednessError(
                    f"coefficient ({mu},{nu}) at bin {b} acts on bins >= {b} (residual {r:.3g})")
            unit = np.zeros((m + 2, m + 2))
            unit[mu, nu] = 1.0
            inc = lattice.embed(lattice.local_increment(StarMatrix(unit, INPUT), system=False),
                                [b], system=False).matrix
            total += entry @ inc
    return LatticeOperator(lattice, total, lattice.n_bins - 1 if lattice.n_bins else -1)


# unitary evolution ---------------------------------------------------------------


def _check_star_unitary(Z: StarMatrix, tol: float):
    if Z.shape != GENERATOR:
        Z = Z.as_shape(GENERATOR)
    r = star_residuals(Z)["star_unitary"]
    if r > tol:
        raise NotStarUnitaryError(f"generator is not star-unitary (residual {r:.3g})")


def bin_propagator(lattice: NoiseLattice, Z: StarMatrix, method: str = "exp",
                   tol: float = DEFAULT_TOL) -> np.ndarray:
    """Propagator of one bin on ``system (x) bin``.

    ``method="exp"`` exponentiates the anti-Hermitian bin generator
    ``-iH dt + sqrt(dt) sum(L_k a_k^+ - L_k^+ a_k) + sum log(S)^i_k a_i^+ a_k``
    so the result is unitary to machine precision; its second-order term
    supplies the ``-L^+L dt / 2`` part of ``Z^-_+``.  ``method="euler"``
    returns ``I + (Z - I (x) delta)^mu_nu dA^nu_mu``.
    """
    Z = Z.promote(lattice.d_sys) if Z.ring == "scalar" else Z
    _check_star_unitary(Z, tol)
    d, f, m = lattice.d_sys, lattice.bin_dim, lattice.m
    if method == "euler":
        eye = np.einsum("ij,ab->ijab", np.eye(m + 2), np.eye(d))
        C = StarMatrix(Z.entries - eye, GENERATOR)
        return np.eye(d * f) + lattice.local_increment(C)
    if method != "exp":
        raise ValueError(f"unknown propagator method {method!r}")
    H, Ls, S = hp_components(Z)
    rt = np.sqrt(lattice.dt)
    K = -1j * np.kron(H, np.eye(f)) * lattice.dt
    for k, L in enumerate(Ls, start=1):
        a = lattice.annihilator(k)
        K = K + rt * (np.kron(L, a.conj().T) - np.kron(L.conj().T, a))
    Sblock = S.transpose(0, 2, 1, 3).reshape(m * d, m * d)
    if np.linalg.norm(Sblock - np.eye(m * d)) > 0:
        G = scipy.linalg.logm(Sblock).reshape(m, d, m, d)
        for i in range(1, m + 1):
            for k in range(1, m + 1):
                num = lattice.annihilator(i).conj().T @ lattice.annihilator(k)
                K = K + np.kron(G[i - 1, :, k - 1, :], num)
    K = 0.5 * (K - K.conj().T)
    return scipy.linalg.expm(K)


def unitary_cocycle(lattice: NoiseLattice, Z, method: str = "exp",
                    tol: float = DEFAULT_TOL) -> list[LatticeOperator]:
    """Dense ``U`` at every bin boundary, ``U_0 = I`` and ``U_{b+1} = M_b U_b``.

    ``Z`` is a single StarMatrix, a per-bin list, or a callable of time.
    ``M_b`` acts on the system and bin ``b``; the system operators in ``Z``
    are taken in the Schroedinger frame.
    """
    sched = _as_schedule(lattice, Z)
    U = lattice.identity()
    out = [U]
    for b, Zb in enumerate(sched):
        M = lattice.embed(bin_propagator(lattice, Zb, method, tol), [b])
        U = M @ U
        U = LatticeOperator(lattice, U.matrix, b)
        out.append(U)
    return out


def evolve_vector(lattice: NoiseLattice, Z, psi, method: str = "exp",
                  tol: float = DEFAULT_TOL) -> list[np.ndarray]:
    """``U_b (psi (x) vacuum)`` at every bin boundary without dense operators."""
    sched = _as_schedule(lattice, Z)
    v = lattice.vacuum(psi).amplitudes
    out = [v]
    for b, Zb in enumerate(sched):
        v = lattice.apply_local(v, bin_propagator(lattice, Zb, method, tol), [b])
        out.append(v)
    return out


# output processes and nondemolition ------------------------------------------------


@dataclass(frozen=True)
class ObservationProcess:
    """Output process ``Y(t) = y0 (x) I + U(t)^+ (sum_{b<t} D^mu_nu dA^nu_mu(b)) U(t)``.

    ``D`` is a scalar-ring matrix (generator or input form; only its
    input-form part enters the increments).
    """

    D: StarMatrix
    y0: np.ndarray | None = None
    name: str = "Y"

    @classmethod
    def quadrature(cls, k: int = 1, m: int = 1, name: str | None = None) -> ObservationProcess:
        D = StarMatrix.from_entries(m, {("-", k): 1.0, (k, "+"): 1.0}, shape=GENERATOR)
        return cls(D, None, name or f"Q{k}")

    @classmethod
    def counting(cls, k: int = 1, m: int = 1, name: str | None = None) -> ObservationProcess:
        D = StarMatrix.from_entries(m, {(k, k): 1.0}, shape=GENERATOR)
        return cls(D, None, name or f"N{k}")

    def field_increment(self, lattice: NoiseLattice) -> np.ndarray:
        """Bin-local increment (acts on one bin only)."""
        if self.D.ring != "scalar":
            raise StarMatrixError("observation matrices must have scalar entries")
        return lattice.local_increment(self.D, system=False)

    def field_operator(self, lattice: NoiseLattice, n: int) -> np.ndarray:
        """Dense ``sum_{b<n}`` of the field increments (no system part)."""
        inc = self.field_increment(lattice)
        total = np.zeros((lattice.total_dim, lattice.total_dim), dtype=complex)
        for b in range(n):
            total += lattice.embed(inc, [b], system=False).matrix
        return total


def output_process(lattice: NoiseLattice, cocycle: Sequence[LatticeOperator],
                   obs: ObservationProcess, n: int) -> np.ndarray:
    U = cocycle[n].matrix
    Y = U.conj().T @ obs.field_operator(lattice, n) @ U
    if obs.y0 is not None:
        Y = Y + lattice.system_operator(obs.y0).matrix
    return Y


def _comm_norm(A: np.ndarray, B: np.ndarray) -> float:
    return float(np.linalg.norm(A @ B - B @ A))


@dataclass
class NondemolitionReport:
    """Commutator norms at bin boundaries.

    ``cross[i, j, t, s] = ||[Y_i(t), X_j(s)]||_F`` and
    ``self_[i, k, t, s] = ||[Y_i(t), Y_k(s)]||_F``.
    """

    cross: np.ndarray
    self_: np.ndarray

    @property
    def max_forward(self) -> float:
        """Largest residual over ``t <= s`` (should vanish)."""
        n = self.cross.shape[-1]
        mask = np.triu(np.ones((n, n), dtype=bool))
        return float(self.cross[..., mask].max(initial=0.0))

    @property
    def max_backward(self) -> float:
        """Largest residual over ``t > s`` (generically nonzero)."""
        n = self.cross.shape[-1]
        mask = np.tril(np.ones((n, n), dtype=bool), -1)
        return float(self.cross[..., mask].max(initial=0.0))

    @property
    def max_self(self) -> float:
        return float(self.self_.max(initial=0.0))


def nondemolition_residual(lattice: NoiseLattice, cocycle: Sequence[LatticeOperator],
                           observations: Sequence[ObservationProcess],
                           system_ops: Sequence) -> NondemolitionReport:
    """Commutators ``[Y_i(t), X_j(s)]`` and ``[Y_i(t), Y_k(s)]`` for all boundaries.

    ``X_j(s) = U(s)^+ (x_j (x) I) U(s)``.
    """
    n = lattice.n_bins + 1
    Ys = [[output_process(lattice, cocycle, o, t) for t in range(n)] for o in observations]
    Xs = []
    for x in system_ops:
        xs = lattice.system_operator(x).matrix
        Xs.append([c.matrix.conj().T @ xs @ c.matrix for c in cocycle])
    cross = np.zeros((len(Ys), len(Xs), n, n))
    for i, j, t, s in itertools.product(range(len(Ys)), range(len(Xs)), range(n), range(n)):
        cross[i, j, t, s] = _comm_norm(Ys[i][t], Xs[j][s])
    selfr = np.zeros((len(Ys), len(Ys), n, n))
    for i, k, t, s in itertools.product(range(len(Ys)), range(len(Ys)), range(n), range(n)):
        selfr[i, k, t, s] = _comm_norm(Ys[i][t], Ys[k][s])
    return NondemolitionReport(cross, selfr)


# conditional expectation oracle --------------------------------------------------


def joint_spectral_decomposition(ops: Sequence[np.ndarray], dim: int | None = None,
                                 tol: float = CLUSTER_TOL) -> list[tuple[tuple, np.ndarray]]:
    """Joint eigenspaces of commuting Hermitian matrices.

    Returns ``(values, V)`` pairs where the columns of ``V`` are an
    orthonormal basis of the joint eigenspace with eigenvalues ``values``.
    Eigenvalues closer than ``tol`` are merged.
    """
    if dim is None:
        dim = ops[0].shape[0]
    blocks = [((), np.eye(dim, dtype=complex))]
    for op in ops:
        nxt = []
        for vals, V in blocks:
            A = V.conj().T @ op @ V
            w, Q = np.linalg.eigh(0.5 * (A + A.conj().T))
            start = 0
            for j in range(1, len(w) + 1):
                if j == len(w) or w[j] - w[j - 1] > tol:
                    cluster = slice(start, j)
                    nxt.append((vals + (float(np.mean(w[cluster])),), V @ Q[:, cluster]))
                    start = j
        blocks = nxt
    return blocks


@dataclass(frozen=True)
class OracleOutcome:
    """One observed record: ``values[s][i]`` is the value of ``Y_i`` at boundary ``s``."""

    values: tuple
    probability: float
    means: dict

    @property
    def label(self) -> str:
        # values within rounding of zero print as 0
        return ";".join(",".join(f"{0.0 if abs(v) < 1e-12 else v:.9g}" for v in row) for row in self.values)

    def increments(self) -> np.ndarray:
        """Per-bin observation increments, shape ``(n_bins, n_obs)``."""
        v = np.asarray(self.values, dtype=float)
        return np.diff(v, axis=0)


@dataclass
class OracleTable:
    t_index: int
    dt: float
    outcomes: list = field(default_factory=list)

    def total_probability(self) -> float:
        return float(sum(o.probability for o in self.outcomes))

    def average(self, name: str) -> float:
        return float(sum(o.probability * o.means[name] for o in self.outcomes))

    def to_dict(self) -> dict:
        return {
            "t_index": self.t_index,
            "t": self.t_index * self.dt,
            "dt": self.dt,
            "outcomes": [
                {"outcome": o.label, "probability": o.probability, "means": o.means}
                for o in self.outcomes
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def match(self, other: OracleTable, tol: float = 1e-7) -> list[tuple[OracleOutcome, OracleOutcome]]:
        """Pair outcomes whose observed values agree within ``tol``."""
        pairs = []
        for o in self.outcomes:
            a = np.asarray(o.values, dtype=float)
            best = None
            for p in other.outcomes:
                b = np.asarray(p.values, dtype=float)
                if a.shape == b.shape and np.max(np.abs(a - b), initial=0.0) <= tol:
                    best = p
                    break
            if best is None:
                raise KeyError(f"outcome {o.label} has no partner")
            pairs.append((o, best))
        return pairs


def _named_ops(system_ops) -> dict:
    if isinstance(system_ops, Mapping):
        return {str(k): np.asarray(v, dtype=complex) for k, v in system_ops.items()}
    return {f"X{j}": np.asarray(v, dtype=complex) for j, v in enumerate(system_ops)}


def conditional_expectation_oracle(lattice: NoiseLattice, Z, observations: Sequence[ObservationProcess],
                                   system_ops, psi, t: int, method: str = "spectral",
                                   comm_tol: float = 1e-8, evolve: str = "exp") -> OracleTable:
    """Posterior means of ``X(t)`` given the record ``{Y_i(s) : s <= t}``.

    ``method="spectral"`` builds the dense output operators, checks that
    they commute, and jointly diagonalizes them.  ``method="structured"``
    uses that every ``Y_i(s)`` with ``s <= t`` equals ``U(t)^+ F_i(s) U(t)``
    and projects ``U(t) xi`` onto bin-wise eigenspaces of the field
    increments; it needs no dense operators and ignores ``y0``.
    """
    if not 0 <= t <= lattice.n_bins:
        raise IndexError(f"boundary {t} out of range 0..{lattice.n_bins}")
    ops = _named_ops(system_ops)
    if method == "spectral":
        return _oracle_spectral(lattice, Z, observations, ops, psi, t, comm_tol, evolve)
    if method == "structured":
        return _oracle_structured(lattice, Z, observations, ops, psi, t, evolve)
    raise ValueError(f"unknown oracle method {method!r}")


def _oracle_spectral(lattice, Z, observations, ops, psi, t, comm_tol, evolve):
    lattice._require_dense()
    cocycle = _partial_cocycle(lattice, Z, t, evolve)
    family = []
    labels = []
    for s in range(t + 1):
        for i, o in enumerate(observations):
            family.append(output_process(lattice, cocycle, o, s))
            labels.append((o.name, s))
    for a, b in itertools.combinations(range(len(family)), 2):
        r = _comm_norm(family[a], family[b])
        if r > comm_tol * max(1.0, np.linalg.norm(family[a]) * np.linalg.norm(family[b])):
            raise NonCommutingError(f"{labels[a]} and {labels[b]} do not commute (residual {r:.3g})")
    xi = lattice.vacuum(psi).amplitudes
    U = cocycle[t].matrix
    Xt = {k: U.conj().T @ lattice.system_operator(x).matrix @ U for k, x in ops.items()}
    table = OracleTable(t, lattice.dt)
    n_obs = len(observations)
    for vals, V in joint_spectral_decomposition(family, lattice.total_dim):
        coef = V.conj().T @ xi
        prob = float(np.vdot(coef, coef).real)
        if prob <= ZERO_PROB:
            continue
        proj = V @ coef
        means = {k: float(np.vdot(proj, X @ proj).real / prob) for k, X in Xt.items()}
        rows = tuple(tuple(vals[s * n_obs:(s + 1) * n_obs]) for s in range(t + 1))
        table.outcomes.append(OracleOutcome(rows, prob, means))
    table.outcomes.sort(key=lambda o: o.values)
    return table


def _partial_cocycle(lattice, Z, t, evolve):
    sched = _as_schedule(lattice, Z)
    U = lattice.identity()
    out = [U]
    for b in range(t):
        U = lattice.embed(bin_propagator(lattice, sched[b], evolve), [b]) @ U
        out.append(U)
    return out


def _oracle_structured(lattice, Z, observations, ops, psi, t, evolve):
    sched = _as_schedule(lattice, Z)
    v = lattice.vacuum(psi).amplitudes
    for b in range(t):
        v = lattice.apply_local(v, bin_propagator(lattice, sched[b], evolve), [b])
    incs = [o.field_increment(lattice) for o in observations]
    local = joint_spectral_decomposition(incs, lattice.bin_dim)
    projectors = [(np.asarray(vals), V @ V.conj().T) for vals, V in local]
    table = OracleTable(t, lattice.dt)
    n_obs = len(observations)
    for choice in itertools.product(range(len(projectors)), repeat=t):
        w = v
        for b, j in enumerate(choice):
            w = lattice.apply_local(w, projectors[j][1], [b], system=False)
        prob = float(np.vdot(w, w).real)
        if prob <= ZERO_PROB:
            continue
        means = {}
        for k, x in ops.items():
            means[k] = float(np.vdot(w, lattice.apply_local(w, x)).real / prob)
        cum = np.zeros(n_obs)
        rows = [tuple(cum)]
        for j in choice:
            cum = cum + projectors[j][0]
            rows.append(tuple(float(c) for c in cum))
        table.outcomes.append(OracleOutcome(tuple(rows), prob, means))
    table.outcomes.sort(key=lambda o: o.values)
    return table
