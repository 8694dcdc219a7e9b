"""Photon counting from a two-level emitter.

With ``L = sigma_-`` and the emitter excited, the posterior stays excited
until the first click and then resets exactly to the ground state.  The
click time is exponential with rate ``eps(L+ L) = 1``.
"""

from __future__ import annotations

import numpy as np
import scipy.stats

from qsfilter.cli import emitter_model
from qsfilter.ensemble import draw_uniforms
from qsfilter.filtering import FilterState, step_counting

model, channels, _ = emitter_model({"gamma": 1.0})
M, dt, n = 2000, 1e-3, 12000
u = draw_uniforms(4, range(M), n)
state = FilterState(np.tile([1.0, 0.0, 0.0, 1.0], (M, 1)))
first = np.full(M, -1)
for j in range(n):
    state, jump = step_counting(model, channels[0], state, u[j], dt)
    first[jump & (first < 0)] = j

print("every path clicked once:", bool(np.all(first >= 0)))
print("post-click states:", np.unique(state.e, axis=0))
times = (first + 0.5) * dt
print(f"mean click time {times.mean():.3f} (expected 1)")
print("KS test against Exp(1):", scipy.stats.kstest(times, "expon"))
