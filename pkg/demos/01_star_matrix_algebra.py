"""Quantum Ito algebra with star-matrices.

A differential ``c^mu_nu dA^nu_mu`` is stored as a (m+2)x(m+2) matrix
indexed by ``-``, the channels ``1..m`` and ``+``.  Products of
differentials follow the Ito table, which in this representation is the
matrix product with the rows ``+`` and columns ``-`` dropped.
"""

from __future__ import annotations

import numpy as np

from qsfilter import StarMatrix, classify, hp_generator, ito_product, star_involution
from qsfilter.starmatrix import identity

# %% the four basic increments for one channel: dt, dA_-, dA^+, dN
dt = StarMatrix.from_entries(1, {("-", "+"): 1.0})
a = StarMatrix.from_entries(1, {("-", 1): 1.0})
ad = StarMatrix.from_entries(1, {(1, "+"): 1.0})
n = StarMatrix.from_entries(1, {(1, 1): 1.0})

print("dA_- dA^+ == dt :", ito_product(a, ad) == dt)
print("dA^+ dA_- == 0  :", ito_product(ad, a).norm() == 0.0)
print("dN dA^+ == dA^+ :", ito_product(n, ad) == ad)
print("dA_- dN == dA_- :", ito_product(a, n) == a)
print("dt dt == 0      :", ito_product(dt, dt).norm() == 0.0)

# %% the star-involution swaps annihilation and creation
print("star(dA_-) == dA^+ :", star_involution(a) == ad)

# %% a spin coupled to one channel: H = u.sigma/2, L = r.sigma/2
sx = np.array([[0, 1], [1, 0]], dtype=complex)
sz = np.diag([1.0, -1.0]).astype(complex)
Z = hp_generator(0.5 * 0.7 * sx, [0.5 * 2.0 * sz])
resid = (star_involution(Z) @ Z - identity(1, 2)).norm()
print(f"generator Z* Z - I residual: {resid:.2e}")
print("predicates:", sorted(classify(Z)))
