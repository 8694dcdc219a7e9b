"""Randomized identity batteries behind the ``verify`` command.

Each check returns a residual; a battery passes when every residual is at or
below its tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fockbin import NoiseLattice, basic_increment, unitary_cocycle
from .starmatrix import (
    GENERATOR,
    INPUT,
    StarMatrix,
    classify,
    hp_generator,
    identity,
    ito_product,
    polarized_product,
    qs_ito_formula,
    star_involution,
)

__all__ = [
    "CheckResult",
    "random_input",
    "random_generator",
    "random_hp_generator",
    "ito_table_parts",
    "expand_ito_table",
    "algebra_battery",
    "lattice_battery",
]


@dataclass
class CheckResult:
    name: str
    residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tol)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<44s} residual={self.residual:.3e}  tol={self.tol:.0e}"


def _rand(rng, shape, integer: bool = False):
    if integer:
        return rng.integers(-5, 6, shape) + 1j * rng.integers(-5, 6, shape)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_input(m: int, rng: np.random.Generator, d: int | None = None,
                 integer: bool = False) -> StarMatrix:
    """Random input-form matrix; ``integer`` entries make products exact in floating point."""
    n = m + 2
    e = _rand(rng, (n, n) if d is None else (n, n, d, d), integer)
    e[n - 1] = 0
    e[:, 0] = 0
    return StarMatrix(e, INPUT)


def random_generator(m: int, rng: np.random.Generator, d: int | None = None) -> StarMatrix:
    n = m + 2
    e = _rand(rng, (n, n) if d is None else (n, n, d, d))
    lv = np.array([0] + [1] * m + [2])
    e[lv[:, None] > lv[None, :]] = 0
    return StarMatrix(e, GENERATOR)


def random_hp_generator(m: int, d: int, rng: np.random.Generator) -> StarMatrix:
    H = _rand(rng, (d, d))
    H = 0.5 * (H + H.conj().T)
    Ls = [0.5 * _rand(rng, (d, d)) for _ in range(m)]
    return hp_generator(H, Ls)


def ito_table_parts(c: StarMatrix) -> dict:
    """Split an input-form matrix into time, annihilation, creation and number parts."""
    m = c.m
    e = c.entries
    parts = {}
    for name, rows, cols in (("time", [0], [m + 1]), ("annihilation", [0], range(1, m + 1)),
                             ("creation", range(1, m + 1), [m + 1]),
                             ("number", range(1, m + 1), range(1, m + 1))):
        p = np.zeros_like(e)
        for i in rows:
            for j in cols:
                p[i, j] = e[i, j]
        parts[name] = StarMatrix(p, INPUT)
    return parts


def _mul(x, y):
    return x * y if np.ndim(x) == 0 else x @ y


def expand_ito_table(b: StarMatrix, d: StarMatrix) -> StarMatrix:
    """Product ``A(b) A(d)`` by the table, entry by entry with explicit sums.

    ``dA_-(b) dA^+(d) = (sum_k b^-_k d^k_+) dt``,
    ``dA_-(b) dN(d) = dA_-(b d)``, ``dN(b) dA^+(d) = dA^+(b d)``,
    ``dN(b) dN(d) = dN(b d)``; every other product of basic increments is 0.
    """
    m = b.m
    n = m + 2
    chans = range(1, m + 1)
    out = np.zeros_like(b.entries)
    be, de = b.entries, d.entries
    for k in chans:
        out[0, n - 1] = out[0, n - 1] + _mul(be[0, k], de[k, n - 1])
    for k in chans:
        for j in chans:
            out[0, k] = out[0, k] + _mul(be[0, j], de[j, k])
            out[k, n - 1] = out[k, n - 1] + _mul(be[k, j], de[j, n - 1])
            for i in chans:
                out[i, k] = out[i, k] + _mul(be[i, j], de[j, k])
    return StarMatrix(out, INPUT)


def algebra_battery(n_cases: int = 200, seed: int = 0, tol: float = 1e-10) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(
        ["involution", "anti-homomorphism", "ito table (scalar)", "ito table (operator)",
         "polarization", "qs ito formula", "hp generator star-unitary"], 0.0)
    closure_ok = True
    for _ in range(n_cases):
        m = int(rng.integers(1, 4))
        d = int(rng.integers(1, 4))
        for ring in (None, d):
            b = random_input(m, rng, ring, integer=ring is None)
            c = random_input(m, rng, ring, integer=ring is None)
            worst["involution"] = max(worst["involution"], (star_involution(star_involution(b)) - b).norm())
            lhs = star_involution(ito_product(b, c))
            rhs = star_involution(c) @ star_involution(b)
            worst["anti-homomorphism"] = max(worst["anti-homomorphism"], (lhs - rhs).norm())
            prod = ito_product(b, c)
            closure_ok &= prod.shape == INPUT
            key = "ito table (scalar)" if ring is None else "ito table (operator)"
            worst[key] = max(worst[key], (prod - expand_ito_table(b, c)).norm())
            worst["polarization"] = max(worst["polarization"], (polarized_product(b, c) - prod).norm())
        # generator pair with corners housing the process values
        F = random_generator(m, rng, d)
        G = random_generator(m, rng, d)
        X, Y = F.entries[0, 0], G.entries[0, 0]
        Fe, Ge = np.array(F.entries), np.array(G.entries)
        Fe[m + 1, m + 1] = X
        Ge[m + 1, m + 1] = Y
        F, G = StarMatrix(Fe, GENERATOR), StarMatrix(Ge, GENERATOR)
        got = qs_ito_formula(F, G, X, Y)
        eyeX = StarMatrix(np.einsum("ij,ab->ijab", np.eye(m + 2), X), GENERATOR)
        eyeY = StarMatrix(np.einsum("ij,ab->ijab", np.eye(m + 2), Y), GENERATOR)
        CF = (F - eyeX).as_shape(INPUT)
        CG = (G - eyeY).as_shape(INPUT)
        # dX* Y + X* dY + dX* dY, each as a coefficient matrix
        expect = star_involution(CF) @ eyeY + star_involution(eyeX) @ CG + ito_product(star_involution(CF), CG)
        worst["qs ito formula"] = max(worst["qs ito formula"], (got - expect).norm())
        Z = random_hp_generator(m, d, rng)
        r = (star_involution(Z) @ Z - identity(m, d)).norm()
        worst["hp generator star-unitary"] = max(worst["hp generator star-unitary"], r)
    # integer scalar entries: the table must hold exactly
    exact = ("involution", "ito table (scalar)")
    out = [CheckResult(k, v, 0.0 if k in exact else tol) for k, v in worst.items()]
    out.append(CheckResult("ito product keeps input form", 0.0 if closure_ok else 1.0, 0.0))
    eye = identity(2, 2)
    preds = classify(eye)
    out.append(CheckResult("identity has every predicate", float(5 - len(preds)), 0.0))
    return out


def lattice_battery(seed: int = 0, tol: float = 1e-12) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    lat = NoiseLattice(1, 0.1, q=2, m=1, d_sys=1)
    a = basic_increment(lat, "annihilation", 0).matrix
    ad = basic_increment(lat, "creation", 0).matrix
    comm = a @ ad - ad @ a
    V = np.zeros((3, 5), dtype=complex)
    V[:2] = _rand(rng, (2, 5))
    resid = max(abs(np.vdot(v, comm @ v) - lat.dt * np.vdot(v, v)) for v in V.T)
    out.append(CheckResult("CCR on <= 1 excitation (q=2)", float(resid), tol))
    out.append(CheckResult("annihilation adjoint is creation", float(np.linalg.norm(a.conj().T - ad)), 0.0))
    lat2 = NoiseLattice(2, 0.1, q=1, m=1, d_sys=1)
    r = 0.0
    for k1 in ("annihilation", "creation", "number"):
        for k2 in ("annihilation", "creation", "number"):
            A = basic_increment(lat2, k1, 0).matrix
            B = basic_increment(lat2, k2, 1).matrix
            r = max(r, float(np.linalg.norm(A @ B - B @ A)))
    out.append(CheckResult("increments on disjoint bins commute", r, 0.0))
    lat3 = NoiseLattice(4, 0.1, q=1, m=1, d_sys=2)
    U = unitary_cocycle(lat3, random_hp_generator(1, 2, rng))[-1].matrix
    resid = float(np.linalg.norm(U.conj().T @ U - np.eye(lat3.total_dim)))
    out.append(CheckResult("cocycle unitarity (4 bins)", resid, 1e-10))
    return out
