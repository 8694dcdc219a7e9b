"""End-to-end acceptance criteria.

Every test records one ``PASS``/``FAIL`` line (printed in the terminal
summary) before asserting.  Run alone with ``pytest -m acceptance -s``.
"""

from __future__ import annotations

import time

import numpy as np
import pytest
import scipy.stats

from qsfilter import cli
from qsfilter.ensemble import coarsen, draw_normals, draw_uniforms, run_ensemble, simulate_batch
from qsfilter.filtering import FilterState, gain_solve, step_counting
from qsfilter.fockbin import (
    NoiseLattice,
    ObservationProcess,
    basic_increment,
    nondemolition_residual,
    unitary_cocycle,
)
from qsfilter.spin import PAULI, SpinScenario, collapse_check, mean_ode, simulate_spin, spin_channels, spin_model
from qsfilter.verify import expand_ito_table, ito_table_parts, random_input
from qsfilter.starmatrix import ito_product

pytestmark = pytest.mark.acceptance

KINDS = ("annihilation", "creation", "number")


def record(log, n: int, name: str, ok: bool, detail: str, t0: float) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d}  {name:<26s} {detail}  [{time.perf_counter() - t0:.1f}s]"
    log.append(line)
    print(line)
    assert ok, line


def test_criterion_01_ito_table(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    # the four nonvanishing products: dA_- dA^+, dA_- dN, dN dA^+, dN dN
    nonzero = {("annihilation", "creation"), ("annihilation", "number"), ("number", "creation"),
               ("number", "number")}
    scalar_worst = operator_worst = 0.0
    zero_worst = 0.0
    for _ in range(1000):
        m = int(rng.integers(1, 4))
        d = int(rng.integers(1, 4))
        for ring in (None, d):
            b = random_input(m, rng, ring, integer=ring is None)
            c = random_input(m, rng, ring, integer=ring is None)
            pb, pc = ito_table_parts(b), ito_table_parts(c)
            pairs = [(b, c)] + [(pb[x], pc[y]) for x, y in nonzero]
            worst = max((ito_product(x, y) - expand_ito_table(x, y)).norm() for x, y in pairs)
            for x in pb:
                for y in pc:
                    if (x, y) not in nonzero:
                        zero_worst = max(zero_worst, ito_product(pb[x], pc[y]).norm())
            if ring is None:
                scalar_worst = max(scalar_worst, worst)
            else:
                operator_worst = max(operator_worst, worst)
    elapsed = time.perf_counter() - t0
    ok = scalar_worst == 0.0 and zero_worst == 0.0 and operator_worst < 1e-12 and elapsed < 5.0
    record(acceptance_log, 1, "ito table", ok,
           f"scalar={scalar_worst:.1e} (exact) zero-products={zero_worst:.1e} "
           f"operator={operator_worst:.2e} (<1e-12) runtime<5s", t0)


def test_criterion_02_ccr_and_commuting_increments(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    lat = NoiseLattice(1, 0.05, q=2, m=1, d_sys=2)
    a = basic_increment(lat, "annihilation", 0).matrix
    ad = basic_increment(lat, "creation", 0).matrix
    num = basic_increment(lat, "number", 0).matrix
    w, V = np.linalg.eigh(num)
    sub = V[:, w < 1.5]
    vecs = [sub[:, j] for j in range(sub.shape[1])]
    k = sub.shape[1]
    vecs += [sub @ (rng.standard_normal(k) + 1j * rng.standard_normal(k)) for _ in range(200)]
    comm = a @ ad - ad @ a
    ccr = max(abs(np.vdot(v, comm @ v) - lat.dt * np.vdot(v, v)) for v in vecs)
    # increments on disjoint bins commute, and commute with the past cocycle
    lat2 = NoiseLattice(3, 0.05, q=2, m=1, d_sys=2)
    disjoint = 0.0
    for b1, b2 in ((0, 1), (0, 2), (1, 2)):
        for k1 in KINDS:
            for k2 in KINDS:
                A = basic_increment(lat2, k1, b1).matrix
                B = basic_increment(lat2, k2, b2).matrix
                disjoint = max(disjoint, float(np.linalg.norm(A @ B - B @ A)))
    Z = spin_model((0.4, 0.0, 0.3), [(0.0, 1.0, 1.5)]).generator(0.0)
    U = unitary_cocycle(lat2, Z)
    future = 0.0
    for b in range(3):
        for k in KINDS:
            A = basic_increment(lat2, k, b).matrix
            for s in range(b + 1):
                future = max(future, float(np.linalg.norm(A @ U[s].matrix - U[s].matrix @ A)))
            X = lat2.system_operator(PAULI[0]).matrix
            future = max(future, float(np.linalg.norm(A @ X - X @ A)))
    ok = ccr < 1e-12 and disjoint < 1e-12 and future < 1e-12
    record(acceptance_log, 2, "CCR on the lattice", ok,
           f"ccr={ccr:.1e} disjoint={disjoint:.1e} past-cocycle={future:.1e} (<1e-12)", t0)


def test_criterion_03_cocycle_unitarity(acceptance_log):
    t0 = time.perf_counter()
    lat = NoiseLattice(8, 0.1, q=1, m=1, d_sys=2)
    Z = spin_model((0.5, -0.3, 0.7), [(0.4, 0.0, 2.0)]).generator(0.0)
    U = unitary_cocycle(lat, Z)[-1].matrix
    resid = float(np.linalg.norm(U.conj().T @ U - np.eye(lat.total_dim)))
    elapsed = time.perf_counter() - t0
    ok = resid < 1e-8 and elapsed < 30.0
    record(acceptance_log, 3, "cocycle unitarity", ok,
           f"dim={lat.total_dim} ||U+U-I||_F={resid:.2e} (<1e-8) runtime<30s", t0)


def test_criterion_04_nondemolition(acceptance_log):
    t0 = time.perf_counter()
    lat = NoiseLattice(6, 0.1, q=1, m=1, d_sys=2)
    Z = spin_model((1.0, 0.0, 0.5), [(0.0, 0.0, 2.0)]).generator(0.0)
    U = unitary_cocycle(lat, Z)
    rep = nondemolition_residual(lat, U, [ObservationProcess.quadrature()], list(PAULI))
    ok = rep.max_forward < 1e-8 and rep.max_backward > 0.05
    record(acceptance_log, 4, "nondemolition", ok,
           f"max t<=s {rep.max_forward:.1e} (<1e-8)  max t>s {rep.max_backward:.3f} (>0.05)", t0)


def test_criterion_05_oracle_equivalence(acceptance_log):
    t0 = time.perf_counter()
    psi = [[np.cos(0.4), 0.0], [np.sin(0.4) * np.cos(0.3), np.sin(0.4) * np.sin(0.3)]]
    sc = {"u": [0.5, 0.0, 0.3], "r": [[0.0, 0.0, 2.0]], "psi": psi}
    parts = []
    ok = True
    for n_bins in (2, 3):
        errs = []
        for dt in (0.05, 0.025):
            table, rows = cli.oracle_compare(sc, dt, n_bins)
            mass = sum(o["probability"] for o in table["outcomes"])
            ok &= abs(mass - 1.0) < 1e-10
            errs.append(max(r["max_abs_diff"] for r in rows))
        ok &= errs[0] < 0.15 and errs[1] < errs[0]
        parts.append(f"{n_bins} bins: {errs[0]:.4f} -> {errs[1]:.4f}")
    record(acceptance_log, 5, "oracle equivalence", ok, "; ".join(parts) + " (<0.15, shrinking)", t0)


def test_criterion_06_gain_formula(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    ch = spin_channels(1)
    worst = 0.0
    for _ in range(10_000):
        r = rng.standard_normal(3) * rng.uniform(0.1, 3.0)
        p = rng.standard_normal(3)
        p *= rng.uniform(0.0, 1.0) ** (1 / 3) / np.linalg.norm(p)
        kappa = gain_solve(spin_model((0.0, 0.0, 0.0), [r]), ch, FilterState(np.concatenate([[1.0], p]))).kappa[0]
        want = np.concatenate([[0.0], r - np.dot(p, r) * p])
        worst = max(worst, float(np.max(np.abs(kappa - want))))
    record(acceptance_log, 6, "gain formula", worst < 1e-10,
           f"max |kappa - (r - (p.r)p)| = {worst:.1e} (<1e-10)", t0)


def test_criterion_07_collapse_law(acceptance_log):
    t0 = time.perf_counter()
    sc = SpinScenario(u=(0.0, 0.0, 0.0), r=[(0.0, 0.0, 2.0)], p0=(0.0, 0.0, 0.0), T=1.0, dt=1e-4)
    dW = draw_normals(7, range(100), sc.n_steps, 1, sc.dt)
    stats = {}
    for scheme in ("milstein", "euler"):
        errs = []
        for factor in (4, 2, 1):
            s = sc.with_dt(sc.dt * factor)
            mon = collapse_check(simulate_spin(s, coarsen(dW, factor), scheme=scheme), s, scheme=scheme)
            errs.append(mon.max_abs)
        means = [float(e.mean()) for e in errs]
        order = float(np.polyfit(np.log([4e-4, 2e-4, 1e-4]), np.log(means), 1)[0])
        stats[scheme] = (float(errs[-1].max()), order)
    # lambda(T) = |r|^2 T = 10
    long = SpinScenario(u=(0.0, 0.0, 0.0), r=[(0.0, 0.0, 2.0)], p0=(0.0, 0.0, 0.0), T=2.5, dt=1e-4)
    rec = simulate_spin(long, draw_normals(17, range(1000), long.n_steps, 1, long.dt), stride=long.n_steps,
                        scheme="milstein")
    defect = 1.0 - np.sum(rec.e[-1, :, 1:] ** 2, axis=-1)
    med, med_abs = float(np.median(defect)), float(np.median(np.abs(defect)))
    elapsed = time.perf_counter() - t0
    fine, order = stats["milstein"]
    ok = fine < 0.05 and order >= 0.5 and med < 1e-3 and elapsed < 300.0
    record(acceptance_log, 7, "collapse law", ok,
           f"milstein: max residual={fine:.2e} (<0.05) order={order:.2f} (>=0.5); "
           f"euler (info): {stats['euler'][0]:.2e}, order {stats['euler'][1]:.2f}; "
           f"median 1-|p|^2={med:.1e} |.|={med_abs:.1e} (<1e-3) runtime<300s", t0)


def test_criterion_08_innovation_martingale(acceptance_log):
    t0 = time.perf_counter()
    # with u = 0 the measured spin component is a hidden constant s = +-1:
    # dY = 2 s dt + dW with P(s = +1) = (1 + p3) / 2
    sc = SpinScenario(u=(0.0, 0.0, 0.0), r=[(0.0, 0.0, 2.0)], p0=(0.4, 0.2, 0.3), T=1.0, dt=1e-3)
    M = 10_000
    s = np.where(np.random.default_rng(np.random.SeedSequence(8)).random(M) < (1 + sc.p0[2]) / 2, 1.0, -1.0)
    dY = 2.0 * s[None, :, None] * sc.dt + draw_normals(8, range(M), sc.n_steps, 1, sc.dt)
    rec = simulate_batch(sc.model(), sc.channels(), sc.e0(), sc.dt, dY, observed=True, stride=sc.n_steps)
    Y1 = rec.innovations[-1, :, 0]
    mean, var = float(Y1.mean()), float(Y1.var(ddof=1))
    ok = abs(mean) < 4 / np.sqrt(M) and abs(var - 1.0) < 0.05
    record(acceptance_log, 8, "innovation martingale", ok,
           f"mean={mean:+.4f} (|.|<0.04) var={var:.4f} (|var-1|<0.05)", t0)


def test_criterion_09_unbiasedness(acceptance_log):
    t0 = time.perf_counter()
    sc = SpinScenario(u=(1.0, 0.0, 0.0), r=[(0.0, 0.0, 1.0)], p0=(0.3, -0.2, 0.5), T=1.0, dt=1e-3)
    summary, _ = run_ensemble(sc.model(), sc.channels(), sc.e0(), sc.T, sc.dt, 100_000, seed=9,
                              n_checkpoints=20, names=("I", "p1", "p2", "p3"), drift="exact")
    want = mean_ode(sc, summary.t)
    diff = np.abs(summary.mean[:, 1:] - want)
    err = summary.stderr[:, 1:]
    z = float(np.max(np.where(err > 0, diff / np.where(err > 0, err, 1.0), 0.0)))
    ok = bool(np.all(diff <= 3 * err)) and time.perf_counter() - t0 < 600.0
    record(acceptance_log, 9, "unbiasedness", ok,
           f"sup |mean - ode| = {diff.max():.2e}, max z = {z:.2f} (<=3) over {len(summary.t)} checkpoints "
           "runtime<600s", t0)


def test_criterion_10_counting_channel(acceptance_log):
    t0 = time.perf_counter()
    model, channels, _ = cli.emitter_model({"gamma": 1.0})
    e0 = np.array([1.0, 0.0, 0.0, 1.0])
    rate = float(e0 @ model.tensors(channels).R[0])
    M, dt, T = 10_000, 1e-3, 15.0
    n = int(round(T / dt))
    first = np.full(M, -1)
    exact = True
    for start in range(0, M, 2000):
        idx = range(start, min(M, start + 2000))
        u = draw_uniforms(10, idx, n)
        state = FilterState(np.broadcast_to(e0, (len(idx), 4)).copy())
        for j in range(n):
            state, jump = step_counting(model, channels[0], state, u[j], dt)
            if jump.any():
                exact &= bool(np.all(state.e[jump] == np.array([1.0, 0.0, 0.0, -1.0])))
                sl = first[start:start + len(idx)]
                sl[jump & (sl < 0)] = j
    times = (first + 0.5) * dt
    ks = scipy.stats.kstest(times[first >= 0], "expon", args=(0.0, 1.0 / rate))
    ok = exact and bool(np.all(first >= 0)) and ks.pvalue > 0.01
    record(acceptance_log, 10, "counting channel", ok,
           f"jumps reset exactly={exact} rate={rate:g} KS D={ks.statistic:.4f} p={ks.pvalue:.3f} (>0.01)", t0)


def test_criterion_11_reproducibility(acceptance_log, tmp_path):
    t0 = time.perf_counter()
    spin = tmp_path / "spin.toml"
    spin.write_text('u = [0.5, 0.0, 0.0]\nr = [[0.0, 0.0, 2.0]]\np0 = [0.0, 0.0, 0.0]\nT = 0.5\ndt = 1e-3\n')
    emitter = tmp_path / "em.toml"
    emitter.write_text('kind = "emitter"\ngamma = 1.0\np0 = [0.0, 0.0, 1.0]\nT = 1.0\ndt = 1e-3\n')
    same = []
    for mode, sc in (("nonlinear", spin), ("linear", spin), ("dual", spin), ("counting", emitter)):
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{mode}-{rep}"
            assert cli.main(["run", "--mode", mode, "--scenario", str(sc), "--ensemble", "50", "--seed", "11",
                             "--keep", "4", "--out", str(out)]) == 0
            outs.append(out)
        names = sorted(p.name for p in outs[0].iterdir())
        same.append(all((outs[0] / nm).read_bytes() == (outs[1] / nm).read_bytes() for nm in names)
                    and "trajectories.jsonl" in names)
    record(acceptance_log, 11, "reproducibility", all(same),
           f"byte-identical outputs for nonlinear/linear/dual/counting: {same}", t0)
