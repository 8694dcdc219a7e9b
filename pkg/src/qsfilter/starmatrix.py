"""Block matrices over the index set {-, 1..m, +} with the indefinite-metric involution.

A :class:`StarMatrix` stores a (2+m)x(2+m) array of entries, each either a
complex scalar or a dense d x d complex operator.  Position 0 is the ``-``
index, positions 1..m are the noise channels and position m+1 is ``+``.
Entry ``[mu, nu]`` is the coefficient ``c^mu_nu`` that multiplies the basic
increment ``dA^nu_mu``, so that

    A(c, dt) = c^-_+ dt + c^-_k dA_k + c^k_+ dA_k^+ + c^i_k dN^k_i.

Two structural shapes are supported:

``input``
    ``c^mu_nu = 0`` whenever ``mu = +`` or ``nu = -`` (coefficients of an
    increment ``A(c, dt)``).
``generator``
    ``F^mu_nu = 0`` whenever the level of ``mu`` exceeds the level of ``nu``
    with levels ``- < k < +`` (generators ``F`` of adapted processes, whose
    corners hold the process value).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "BlockIndex",
    "StarMatrix",
    "ItoDifferential",
    "StarMatrixError",
    "RingMismatchError",
    "ShapeError",
    "DEFAULT_TOL",
    "metric",
    "star_involution",
    "ito_product",
    "polarized_product",
    "commutator",
    "qs_ito_formula",
    "classify",
    "star_residuals",
    "hp_generator",
    "hp_components",
    "identity",
]

DEFAULT_TOL = 1e-10

SCALAR = "scalar"
OPERATOR = "operator"
INPUT = "input"
GENERATOR = "generator"


class StarMatrixError(ValueError):
    pass


class RingMismatchError(StarMatrixError):
    pass


class ShapeError(StarMatrixError):
    pass


@dataclass(frozen=True)
class BlockIndex:
    """One of ``-``, a channel ``k`` in 1..m, or ``+``.

    Ordered ``minus < channel(1) < ... < channel(m) < plus``.
    """

    kind: str
    k: int = 0

    def __post_init__(self):
        if self.kind not in ("minus", "channel", "plus"):
            raise ValueError(f"unknown block index kind {self.kind!r}")
        if self.kind == "channel" and self.k < 1:
            raise ValueError("channel indices start at 1")

    @classmethod
    def minus(cls) -> BlockIndex:
        return cls("minus")

    @classmethod
    def plus(cls) -> BlockIndex:
        return cls("plus")

    @classmethod
    def channel(cls, k: int) -> BlockIndex:
        return cls("channel", int(k))

    @classmethod
    def parse(cls, value) -> BlockIndex:
        if isinstance(value, BlockIndex):
            return value
        if value in ("-", "minus"):
            return cls.minus()
        if value in ("+", "plus"):
            return cls.plus()
        return cls.channel(int(value))

    @property
    def level(self) -> int:
        return {"minus": 0, "channel": 1, "plus": 2}[self.kind]

    def _key(self):
        return (self.level, self.k)

    def __lt__(self, other: BlockIndex) -> bool:
        return self._key() < other._key()

    def __le__(self, other: BlockIndex) -> bool:
        return self._key() <= other._key()

    def position(self, m: int) -> int:
        if self.kind == "minus":
            return 0
        if self.kind == "plus":
            return m + 1
        if self.k > m:
            raise IndexError(f"channel {self.k} out of range for m={m}")
        return self.k

    def __str__(self) -> str:
        return {"minus": "-", "plus": "+"}.get(self.kind, str(self.k))


def _levels(m: int) -> np.ndarray:
    return np.array([0] + [1] * m + [2])


def _zero_mask(m: int, shape: str) -> np.ndarray:
    n = m + 2
    if shape == INPUT:
        mask = np.zeros((n, n), dtype=bool)
        mask[n - 1, :] = True
        mask[:, 0] = True
        return mask
    if shape == GENERATOR:
        lv = _levels(m)
        return lv[:, None] > lv[None, :]
    raise ShapeError(f"unknown shape {shape!r}")


def metric(m: int) -> np.ndarray:
    """Anti-diagonal metric ``g`` on the (2+m)-dimensional index space.

    ``g`` swaps ``-`` and ``+`` and acts as the identity on the channels.
    """
    n = m + 2
    g = np.zeros((n, n))
    g[0, n - 1] = g[n - 1, 0] = 1.0
    g[1 : n - 1, 1 : n - 1] = np.eye(m)
    return g


class StarMatrix:
    """Immutable (2+m)x(2+m) block matrix with a declared structural shape.

    Parameters
    ----------
    entries : array_like
        Shape ``(m+2, m+2)`` for scalar entries or ``(m+2, m+2, d, d)`` for
        operator entries.
    shape : {"input", "generator"}
        Structural-zero pattern, checked on construction.
    """

    __slots__ = ("_entries", "_shape")

    def __init__(self, entries, shape: str = INPUT):
        arr = np.array(entries, dtype=complex)
        if arr.ndim not in (2, 4) or arr.shape[0] != arr.shape[1] or arr.shape[0] < 3:
            raise RingMismatchError(
                f"entries must have shape (n, n) or (n, n, d, d) with n >= 3, got {arr.shape}"
            )
        if arr.ndim == 4 and arr.shape[2] != arr.shape[3]:
            raise RingMismatchError("operator entries must be square")
        if not np.all(np.isfinite(arr)):
            raise StarMatrixError("entries must be finite")
        mask = _zero_mask(arr.shape[0] - 2, shape)
        if np.any(arr[mask] != 0):
            raise ShapeError(f"structural zeros of the {shape!r} shape are violated")
        arr.setflags(write=False)
        object.__setattr__(self, "_entries", arr)
        object.__setattr__(self, "_shape", shape)

    def __setattr__(self, name, value):
        raise AttributeError("StarMatrix is immutable")

    # construction ---------------------------------------------------------

    @classmethod
    def zeros(cls, m: int, shape: str = INPUT, d: int | None = None) -> StarMatrix:
        n = m + 2
        return cls(np.zeros((n, n) if d is None else (n, n, d, d), dtype=complex), shape)

    @classmethod
    def from_entries(
        cls,
        m: int,
        entries: Mapping,
        shape: str = INPUT,
        d: int | None = None,
    ) -> StarMatrix:
        """Build from a sparse ``{(mu, nu): value}`` mapping.

        Indices may be :class:`BlockIndex`, ``"-"``, ``"+"`` or a channel
        number.  With ``d`` given, scalar values are promoted to ``value * I_d``.
        """
        n = m + 2
        arr = np.zeros((n, n) if d is None else (n, n, d, d), dtype=complex)
        for (mu, nu), value in entries.items():
            i = BlockIndex.parse(mu).position(m)
            j = BlockIndex.parse(nu).position(m)
            value = np.asarray(value, dtype=complex)
            if d is None:
                if value.ndim != 0:
                    raise RingMismatchError("operator value given for a scalar-ring matrix")
                arr[i, j] = value
            elif value.ndim == 0:
                arr[i, j] = value * np.eye(d)
            elif value.shape == (d, d):
                arr[i, j] = value
            else:
                raise RingMismatchError(f"entry ({mu},{nu}) has shape {value.shape}, expected ({d},{d})")
        return cls(arr, shape)

    # accessors ------------------------------------------------------------

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def shape(self) -> str:
        return self._shape

    @property
    def m(self) -> int:
        return self._entries.shape[0] - 2

    @property
    def ring(self) -> str:
        return SCALAR if self._entries.ndim == 2 else OPERATOR

    @property
    def d(self) -> int | None:
        return None if self.ring == SCALAR else self._entries.shape[2]

    def entry(self, mu, nu):
        i = BlockIndex.parse(mu).position(self.m)
        j = BlockIndex.parse(nu).position(self.m)
        return self._entries[i, j]

    def block(self, rows: str, cols: str) -> np.ndarray:
        """Sub-array for the row/column groups ``"-"``, ``"o"`` or ``"+"``."""
        sl = {"-": slice(0, 1), "o": slice(1, self.m + 1), "+": slice(self.m + 1, self.m + 2)}
        return self._entries[sl[rows], sl[cols]]

    def as_shape(self, shape: str) -> StarMatrix:
        return StarMatrix(self._entries, shape)

    def promote(self, d: int) -> StarMatrix:
        """Scalar ring -> operator ring by ``c |-> c * I_d``."""
        if self.ring == OPERATOR:
            if self.d != d:
                raise RingMismatchError(f"cannot promote d={self.d} operators to d={d}")
            return self
        return StarMatrix(np.einsum("ij,ab->ijab", self._entries, np.eye(d)), self._shape)

    def norm(self) -> float:
        return float(np.linalg.norm(self._entries.ravel()))

    # algebra ----------------------------------------------------------------

    def star(self) -> StarMatrix:
        return star_involution(self)

    def _check_compatible(self, other: StarMatrix):
        if not isinstance(other, StarMatrix):
            raise TypeError(f"expected StarMatrix, got {type(other).__name__}")
        if self.m != other.m:
            raise StarMatrixError(f"channel counts differ: {self.m} vs {other.m}")
        if self.ring != other.ring or self.d != other.d:
            raise RingMismatchError(
                f"ring mismatch: {self.ring}(d={self.d}) vs {other.ring}(d={other.d})"
            )

    def _combined_shape(self, other: StarMatrix) -> str:
        return INPUT if INPUT in (self._shape, other._shape) else GENERATOR

    def __matmul__(self, other: StarMatrix) -> StarMatrix:
        self._check_compatible(other)
        if self.ring == SCALAR:
            prod = self._entries @ other._entries
        else:
            prod = np.einsum("ijab,jkbc->ikac", self._entries, other._entries)
        return StarMatrix(prod, self._combined_shape(other))

    def __add__(self, other: StarMatrix) -> StarMatrix:
        self._check_compatible(other)
        shape = INPUT if self._shape == other._shape == INPUT else GENERATOR
        return StarMatrix(self._entries + other._entries, shape)

    def __sub__(self, other: StarMatrix) -> StarMatrix:
        self._check_compatible(other)
        shape = INPUT if self._shape == other._shape == INPUT else GENERATOR
        return StarMatrix(self._entries - other._entries, shape)

    def __neg__(self) -> StarMatrix:
        return StarMatrix(-self._entries, self._shape)

    def __mul__(self, scalar) -> StarMatrix:
        if isinstance(scalar, StarMatrix):
            raise TypeError("use @ for the matrix product")
        return StarMatrix(complex(scalar) * self._entries, self._shape)

    __rmul__ = __mul__

    def allclose(self, other: StarMatrix, tol: float = DEFAULT_TOL) -> bool:
        self._check_compatible(other)
        return float(np.linalg.norm((self._entries - other._entries).ravel())) <= tol

    def __eq__(self, other) -> bool:
        if not isinstance(other, StarMatrix):
            return NotImplemented
        return (
            self._shape == other._shape
            and self._entries.shape == other._entries.shape
            and bool(np.array_equal(self._entries, other._entries))
        )

    __hash__ = None

    def __repr__(self) -> str:
        ring = "scalar" if self.ring == SCALAR else f"operator(d={self.d})"
        return f"StarMatrix(m={self.m}, shape={self._shape!r}, ring={ring})"

    # serialization --------------------------------------------------------------

    def to_dict(self) -> dict:
        pairs = np.stack([self._entries.real, self._entries.imag], axis=-1)
        return {
            "m": self.m,
            "shape": self._shape,
            "ring": self.ring,
            "d": self.d,
            "entries": pairs.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> StarMatrix:
        pairs = np.asarray(data["entries"], dtype=float)
        arr = pairs[..., 0] + 1j * pairs[..., 1]
        m = int(data["m"])
        ring = data.get("ring", SCALAR)
        expect = 2 if ring == SCALAR else 4
        if arr.ndim != expect or arr.shape[0] != m + 2:
            raise StarMatrixError(f"entries do not match m={m}, ring={ring}")
        if ring == OPERATOR and data.get("d") is not None and arr.shape[2] != int(data["d"]):
            raise RingMismatchError("declared d does not match entries")
        return cls(arr, data.get("shape", INPUT))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> StarMatrix:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ItoDifferential:
    """The increment ``A(c, dt) = c^mu_nu dA^nu_mu``; products follow the Ito table."""

    coeff: StarMatrix

    def __post_init__(self):
        if self.coeff.shape != INPUT:
            raise ShapeError("Ito differentials carry input-form coefficients")

    def __mul__(self, other: ItoDifferential) -> ItoDifferential:
        return ItoDifferential(ito_product(self.coeff, other.coeff))

    def adjoint(self) -> ItoDifferential:
        return ItoDifferential(star_involution(self.coeff))


def identity(m: int, d: int | None = None) -> StarMatrix:
    """``I (x) delta`` as a generator-form matrix."""
    n = m + 2
    eye = np.eye(n, dtype=complex)
    if d is not None:
        eye = np.einsum("ij,ab->ijab", eye, np.eye(d))
    return StarMatrix(eye, GENERATOR)


def _dagger_entries(c: StarMatrix) -> np.ndarray:
    e = c.entries
    if c.ring == SCALAR:
        return e.conj().T
    return np.conj(np.transpose(e, (1, 0, 3, 2)))


def star_involution(c: StarMatrix) -> StarMatrix:
    """``c* = g c^dagger g``; entrywise ``(c*)^mu_nu = (c^{-nu}_{-mu})^dagger``.

    ``-mu`` swaps the ``-`` and ``+`` positions and fixes the channels.
    """
    n = c.m + 2
    perm = np.array([n - 1] + list(range(1, n - 1)) + [0])
    dag = _dagger_entries(c)
    return StarMatrix(dag[np.ix_(perm, perm)], c.shape)


def ito_product(b: StarMatrix, d: StarMatrix) -> StarMatrix:
    """Coefficient of ``A(b, dt) A(d, dt) = A(bd, dt)``.

    Both factors must be input-form; the product keeps the input shape.
    """
    for name, x in (("b", b), ("d", d)):
        if x.shape != INPUT:
            raise ShapeError(f"{name} is not input-form")
    return b @ d


def polarized_product(b: StarMatrix, d: StarMatrix) -> StarMatrix:
    """``b d`` rebuilt from four star-squares ``(b* + i^n d)*(b* + i^n d) / (4 i^n)``."""
    bs = star_involution(b)
    total = None
    for n in range(4):
        phase = 1j**n
        w = bs + phase * d
        term = (star_involution(w) @ w) * (1.0 / (4.0 * phase))
        total = term if total is None else total + term
    return total.as_shape(b._combined_shape(d))


def commutator(b: StarMatrix, d: StarMatrix) -> StarMatrix:
    return b @ d - d @ b


def _corner(F: StarMatrix, which: str):
    pos = 0 if which == "-" else F.m + 1
    return F.entries[pos, pos]


def qs_ito_formula(F: StarMatrix, G: StarMatrix, X, Y, tol: float = DEFAULT_TOL) -> StarMatrix:
    """Generator of ``d(X^dagger Y)``: ``F* G - (X^dagger Y) (x) delta``.

    ``F`` and ``G`` are generator-form with corners equal to the process
    values ``X`` and ``Y``.
    """
    for name, M, val in (("F", F, X), ("G", G, Y)):
        if M.shape != GENERATOR:
            raise ShapeError(f"{name} is not generator-form")
        lo, hi = _corner(M, "-"), _corner(M, "+")
        val = np.asarray(val, dtype=complex)
        if np.linalg.norm(np.ravel(lo - hi)) > tol or np.linalg.norm(np.ravel(lo - val)) > tol:
            raise StarMatrixError(f"{name} corners do not both equal the process value")
    X = np.asarray(X, dtype=complex)
    Y = np.asarray(Y, dtype=complex)
    XY = np.conj(X) * Y if X.ndim == 0 else X.conj().T @ Y
    if F.ring == SCALAR:
        corr = StarMatrix(XY * np.eye(F.m + 2), GENERATOR)
    else:
        corr = StarMatrix(np.einsum("ij,ab->ijab", np.eye(F.m + 2), XY), GENERATOR)
    return (star_involution(F) @ G - corr).as_shape(GENERATOR)


def star_residuals(F: StarMatrix) -> dict[str, float]:
    """Frobenius residuals of the defining identities of each predicate."""
    Fs = star_involution(F)
    eye = identity(F.m, F.d)
    FsF = Fs @ F
    FFs = F @ Fs
    return {
        "star_selfadjoint": (Fs - F).norm(),
        "star_isometric": (FsF - eye).norm(),
        "star_unitary": max((FsF - eye).norm(), (FFs - eye).norm()),
        "star_projector": max((FsF - F).norm(), (Fs - F).norm()),
        "star_normal": (FFs - FsF).norm(),
    }


def classify(F: StarMatrix, tol: float = DEFAULT_TOL) -> frozenset[str]:
    """Predicates of ``F`` holding within ``tol`` (Frobenius residual).

    ``star_unitary`` is tested as ``F*F = I = FF*``, which for square blocks
    is ``F* = F^-1`` without forming an inverse.
    """
    if F.shape != GENERATOR:
        F = F.as_shape(GENERATOR)
    return frozenset(name for name, r in star_residuals(F).items() if r <= tol)


def hp_generator(H, Ls: Iterable, S=None) -> StarMatrix:
    """Star-unitary generator built from a Hamiltonian, couplings and scattering.

    ``Z^k_+ = L_k``, ``Z^-_k = -(S^dagger L)_k^dagger``, ``Z^i_k = S^i_k`` and
    ``Z^-_+ = -(1/2) sum L_k^dagger L_k - iH``.
    """
    H = np.asarray(H, dtype=complex)
    d = H.shape[0]
    Ls = [np.asarray(L, dtype=complex) for L in Ls]
    m = len(Ls)
    if m == 0:
        raise StarMatrixError("need at least one channel")
    if S is None:
        S = np.einsum("ik,ab->ikab", np.eye(m), np.eye(d))
    S = np.asarray(S, dtype=complex)
    n = m + 2
    Z = np.zeros((n, n, d, d), dtype=complex)
    Z[0, 0] = Z[n - 1, n - 1] = np.eye(d)
    Z[1 : n - 1, 1 : n - 1] = S
    for k, L in enumerate(Ls, start=1):
        Z[k, n - 1] = L
        # -(sum_i L_i^dagger S^i_k)
        Z[0, k] = -sum(Ls[i].conj().T @ S[i, k - 1] for i in range(m))
    Z[0, n - 1] = -0.5 * sum(L.conj().T @ L for L in Ls) - 1j * H
    return StarMatrix(Z, GENERATOR)


def hp_components(Z: StarMatrix):
    """Inverse of :func:`hp_generator`: returns ``(H, [L_k], S)``."""
    if Z.ring != OPERATOR:
        Z = Z.promote(1)
    n = Z.m + 2
    e = Z.entries
    Ls = [e[k, n - 1] for k in range(1, n - 1)]
    S = e[1 : n - 1, 1 : n - 1]
    z = e[0, n - 1]
    H = 0.5j * (z - z.conj().T)
    return H, Ls, S
