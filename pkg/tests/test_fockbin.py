from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsfilter.fockbin import (
    AdaptednessError,
    DimensionCapError,
    NoiseLattice,
    NonCommutingError,
    NotStarUnitaryError,
    ObservationProcess,
    basic_increment,
    bin_propagator,
    conditional_expectation_oracle,
    evolve_vector,
    ito_sum_integral,
    joint_spectral_decomposition,
    nondemolition_residual,
    unitary_cocycle,
)
from qsfilter.spin import PAULI, spin_model
from qsfilter.starmatrix import GENERATOR, INPUT, StarMatrix, hp_generator, identity, star_involution
from qsfilter.verify import random_hp_generator

SX, SY, SZ = PAULI
PSI = np.array([np.cos(0.4), np.sin(0.4) * np.exp(0.3j)])


def spin_Z(u=(0.0, 0.0, 0.0), r=(0.0, 0.0, 2.0)):
    return spin_model(u, [r]).generator(0.0)


# basic processes -------------------------------------------------------------------


def test_time_increment_is_dt_identity():
    lat = NoiseLattice(3, 0.1, q=2, d_sys=1)
    for b in range(3):
        np.testing.assert_allclose(basic_increment(lat, "time", b).matrix, 0.1 * np.eye(lat.total_dim))


def test_vacuum_annihilation_creation_gives_dt():
    for q in (1, 2, 3):
        lat = NoiseLattice(2, 0.05, q=q, d_sys=1)
        vac = lat.vacuum([1.0]).amplitudes
        a = basic_increment(lat, "annihilation", 1).matrix
        ad = basic_increment(lat, "creation", 1).matrix
        assert abs(np.vdot(vac, a @ ad @ vac) - 0.05) < 1e-15


def test_ccr_on_truncation_safe_sector():
    lat = NoiseLattice(1, 0.1, q=2, d_sys=1)
    a = basic_increment(lat, "annihilation", 0).matrix
    ad = basic_increment(lat, "creation", 0).matrix
    comm = a @ ad - ad @ a
    safe = comm[:2, :2]
    np.testing.assert_allclose(safe, 0.1 * np.eye(2), atol=1e-15)
    # the top rung of the truncation is where the CCR breaks
    assert abs(comm[2, 2] - 0.1) > 0.1


def test_disjoint_bins_commute():
    lat = NoiseLattice(3, 0.1, q=1, m=2, d_sys=1)
    kinds = [("annihilation", 1), ("creation", 2), ("number", 1)]
    for k1, c1 in kinds:
        for k2, c2 in kinds:
            A = basic_increment(lat, k1, 0, c1).matrix
            B = basic_increment(lat, k2, 2, c2).matrix
            assert np.array_equal(A @ B, B @ A)


def test_cross_channel_number_increment():
    lat = NoiseLattice(1, 0.1, q=1, m=2, d_sys=1)
    N12 = basic_increment(lat, "number", 0, k=2, i=1).matrix
    a1 = lat.embed(lat.annihilator(1), [0], system=False).matrix
    a2 = lat.embed(lat.annihilator(2), [0], system=False).matrix
    np.testing.assert_allclose(N12, a1.conj().T @ a2)


# Ito sums -------------------------------------------------------------------------


def test_zero_coefficients_give_zero():
    lat = NoiseLattice(3, 0.1, d_sys=2)
    assert ito_sum_integral(lat, StarMatrix.zeros(1, d=2)).norm() == 0.0


def test_time_coefficient_sums_to_t():
    lat = NoiseLattice(4, 0.1, d_sys=2)
    c = StarMatrix.from_entries(1, {("-", "+"): 1.0})
    np.testing.assert_allclose(ito_sum_integral(lat, c).matrix, 0.4 * np.eye(lat.total_dim), atol=1e-14)


def test_creation_sum_on_vacuum():
    n, dt = 5, 0.07
    lat = NoiseLattice(n, dt, d_sys=1)
    c = StarMatrix.from_entries(1, {(1, "+"): 1.0})
    vac = lat.vacuum([1.0]).amplitudes
    out = ito_sum_integral(lat, c).matrix @ vac
    assert abs(np.vdot(out, out).real - n * dt) < 1e-14
    # one photon in each bin with amplitude sqrt(dt)
    for b in range(n):
        idx = np.zeros(n + 1, dtype=int)
        idx[b + 1] = 1
        flat = np.ravel_multi_index(tuple(idx), lat.dims)
        assert abs(out[flat] - np.sqrt(dt)) < 1e-15


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adjoint_is_star_sum(seed):
    rng = np.random.default_rng(seed)
    lat = NoiseLattice(3, 0.1, q=1, m=1, d_sys=2)
    cs = []
    for _ in range(3):
        e = rng.standard_normal((3, 3, 2, 2)) + 1j * rng.standard_normal((3, 3, 2, 2))
        e[2] = 0
        e[:, 0] = 0
        cs.append(StarMatrix(e, INPUT))
    lhs = ito_sum_integral(lat, cs).dagger().matrix
    rhs = ito_sum_integral(lat, [star_involution(c) for c in cs]).matrix
    assert np.max(np.abs(lhs - rhs)) < 1e-14


def test_adapted_lattice_coefficients_accepted_and_future_rejected():
    lat = NoiseLattice(2, 0.1, q=1, d_sys=1)
    N0 = basic_increment(lat, "number", 0).matrix
    eye = np.eye(lat.total_dim)
    zero = np.zeros_like(eye)
    ok = [StarMatrix.from_entries(1, {(1, "+"): eye}, d=lat.total_dim),
          StarMatrix.from_entries(1, {(1, "+"): N0}, d=lat.total_dim)]
    out = ito_sum_integral(lat, ok).matrix
    want = basic_increment(lat, "creation", 0).matrix + N0 @ basic_increment(lat, "creation", 1).matrix
    np.testing.assert_allclose(out, want, atol=1e-14)
    bad = [StarMatrix.from_entries(1, {(1, "+"): N0}, d=lat.total_dim),
           StarMatrix.from_entries(1, {(1, "+"): zero}, d=lat.total_dim)]
    with pytest.raises(AdaptednessError):
        ito_sum_integral(lat, bad)


# cocycle ----------------------------------------------------------------------------


def test_trivial_generator_gives_identity():
    lat = NoiseLattice(3, 0.1, d_sys=2)
    for U in unitary_cocycle(lat, identity(1, 2)):
        np.testing.assert_allclose(U.matrix, np.eye(lat.total_dim), atol=1e-15)


def test_sigma_z_conserved_under_z_measurement():
    lat = NoiseLattice(5, 0.1, d_sys=2)
    Us = unitary_cocycle(lat, spin_Z(r=(0, 0, 2)))
    xi = lat.vacuum(PSI).amplitudes
    sz = lat.system_operator(SZ).matrix
    p3 = np.vdot(PSI, SZ @ PSI).real
    for U in Us:
        v = U.matrix @ xi
        assert abs(np.vdot(v, sz @ v).real - p3) < 1e-12


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_generator_cocycle_unitary(seed):
    lat = NoiseLattice(8, 0.1, q=1, d_sys=2)
    Z = random_hp_generator(1, 2, np.random.default_rng(seed))
    v = evolve_vector(lat, Z, [1.0, 0.0])
    assert abs(np.linalg.norm(v[-1]) - 1.0) < 1e-12
    small = NoiseLattice(4, 0.1, q=1, d_sys=2)
    U = unitary_cocycle(small, Z)[-1].matrix
    assert np.linalg.norm(U.conj().T @ U - np.eye(small.total_dim)) < 1e-8


def test_euler_propagator_matches_exp_to_first_order():
    Z = spin_Z(u=(0.3, 0.1, 0.5), r=(1.0, 0.0, 0.5))
    errs = []
    for dt in (0.02, 0.01, 0.005):
        lat = NoiseLattice(1, dt, d_sys=2)
        errs.append(np.linalg.norm(bin_propagator(lat, Z) - bin_propagator(lat, Z, "euler")))
    # the difference is O(dt) with q = 1 truncation
    assert errs[1] < errs[0] and errs[2] < errs[1]


def test_non_star_unitary_generator_rejected():
    bad = np.array(spin_Z().entries)
    bad[0, -1] += np.eye(2)
    with pytest.raises(NotStarUnitaryError):
        bin_propagator(NoiseLattice(1, 0.1), StarMatrix(bad, GENERATOR))


def test_cocycle_system_frame_ordering():
    # one bin without noise coupling: U = exp(-i H dt) on the system
    lat = NoiseLattice(2, 0.1, d_sys=2)
    Z = spin_model((0.0, 0.0, 1.0), [(0.0, 0.0, 0.0)]).generator(0.0)
    U = unitary_cocycle(lat, Z)[2].matrix
    v = U @ lat.vacuum([1 / np.sqrt(2), 1 / np.sqrt(2)]).amplitudes
    stride = lat.total_dim // 2
    sys_state = v[::stride]
    want = np.exp(-1j * 0.5 * np.array([1, -1]) * 0.2) / np.sqrt(2)
    np.testing.assert_allclose(sys_state, want, atol=1e-14)


# nondemolition -----------------------------------------------------------------------


def test_output_commutes_with_itself():
    lat = NoiseLattice(3, 0.1, d_sys=2)
    cyc = unitary_cocycle(lat, spin_Z(u=(0.3, 0, 0.2), r=(0.5, 0, 1.0)))
    rep = nondemolition_residual(lat, cyc, [ObservationProcess.quadrature()], [SX, SY, SZ])
    assert rep.max_self < 1e-12
    assert rep.max_forward < 1e-12
    assert rep.max_backward > 0.1


def test_counting_output_nondemolition():
    lat = NoiseLattice(3, 0.1, d_sys=2)
    sm = np.array([[0, 0], [1, 0]], dtype=complex)
    Z = hp_generator(np.zeros((2, 2)), [sm])
    cyc = unitary_cocycle(lat, Z)
    rep = nondemolition_residual(lat, cyc, [ObservationProcess.counting()], [SZ])
    assert rep.max_forward < 1e-12
    assert rep.max_self < 1e-12


# oracle --------------------------------------------------------------------------------


def test_oracle_at_time_zero_uses_initial_observable():
    lat = NoiseLattice(1, 0.1, d_sys=2)
    obs = [ObservationProcess(StarMatrix.zeros(1, GENERATOR), SZ, "Z")]
    tab = conditional_expectation_oracle(lat, spin_Z(), obs, {"p3": SZ}, [1.0, 0.0], 0)
    assert len(tab.outcomes) == 1
    o = tab.outcomes[0]
    assert o.values == ((1.0,),)
    assert abs(o.probability - 1.0) < 1e-14
    assert abs(o.means["p3"] - 1.0) < 1e-14


@pytest.mark.parametrize("method", ["spectral", "structured"])
def test_oracle_total_expectation_and_positivity(method):
    lat = NoiseLattice(3, 0.05, d_sys=2)
    Z = spin_Z(u=(0.5, 0.0, 0.3), r=(1.0, 0.0, 1.5))
    ops = {"p1": SX, "p2": SY, "p3": SZ}
    tab = conditional_expectation_oracle(lat, Z, [ObservationProcess.quadrature()], ops, PSI, 3, method=method)
    assert all(o.probability >= 0 for o in tab.outcomes)
    assert abs(tab.total_probability() - 1.0) < 1e-12
    v = evolve_vector(lat, Z, PSI)[-1]
    for k, X in ops.items():
        direct = np.vdot(v, lat.apply_local(v, X)).real
        assert abs(tab.average(k) - direct) < 1e-10


def test_oracle_modularity():
    # eps(X B) = eps(X) B for B a function of the record: take B = Y(1)
    lat = NoiseLattice(2, 0.05, d_sys=2)
    Z = spin_Z(u=(0.2, 0.0, 0.0), r=(0.0, 0.0, 2.0))
    obs = ObservationProcess.quadrature()
    cyc = unitary_cocycle(lat, Z)
    U2 = cyc[2].matrix
    # in the final frame Y(1) = U(2)^+ F(1) U(2)
    B = U2.conj().T @ obs.field_operator(lat, 1) @ U2
    X = U2.conj().T @ lat.system_operator(SZ).matrix @ U2
    xi = lat.vacuum(PSI).amplitudes
    tab = conditional_expectation_oracle(lat, Z, [obs], {"p3": SZ}, PSI, 2)
    family = [U2.conj().T @ obs.field_operator(lat, s) @ U2 for s in range(3)]
    for vals, V in joint_spectral_decomposition(family):
        P = V @ V.conj().T
        pv = np.vdot(xi, P @ xi).real
        if pv < 1e-14:
            continue
        lhs = np.vdot(xi, P @ X @ B @ P @ xi) / pv
        o = next(o for o in tab.outcomes
                 if abs(o.values[1][0] - vals[1]) < 1e-9 and abs(o.values[2][0] - vals[2]) < 1e-9)
        assert abs(lhs - o.means["p3"] * vals[1]) < 1e-10


# frozen table from the spectral route (u = (0.5, 0, 0.3), r = (0, 0, 2), dt = 0.05)
GOLDEN_2BIN = [
    ((-1, -1), 0.145009179080809, -0.04776216929816627),
    ((-1, +1), 0.203767462655924, 0.7061395732499712),
    ((+1, -1), 0.20275879671581692, 0.7089970697246529),
    ((+1, +1), 0.44846456154745, 0.9484592280930866),
]


@pytest.mark.parametrize("method", ["spectral", "structured"])
def test_two_bin_golden_table(method):
    dt = 0.05
    lat = NoiseLattice(2, dt, d_sys=2)
    Z = spin_Z(u=(0.5, 0.0, 0.3), r=(0.0, 0.0, 2.0))
    tab = conditional_expectation_oracle(lat, Z, [ObservationProcess.quadrature()], {"p3": SZ}, PSI, 2,
                                         method=method)
    assert len(tab.outcomes) == 4
    for o, (signs, prob, p3) in zip(tab.outcomes, GOLDEN_2BIN):
        np.testing.assert_allclose(o.increments()[:, 0], np.array(signs) * np.sqrt(dt), atol=1e-12)
        assert abs(o.probability - prob) < 1e-12
        assert abs(o.means["p3"] - p3) < 1e-12


def test_structured_and_spectral_routes_agree_on_two_channels():
    lat = NoiseLattice(2, 0.05, q=1, m=2, d_sys=2)
    Z = spin_model((0.3, 0.0, 0.4), [(0.0, 0.0, 1.0), (1.0, 0.0, 0.0)]).generator(0.0)
    obs = [ObservationProcess.quadrature(1, 2), ObservationProcess.quadrature(2, 2)]
    ops = {"p1": SX, "p3": SZ}
    a = conditional_expectation_oracle(lat, Z, obs, ops, PSI, 2)
    b = conditional_expectation_oracle(lat, Z, obs, ops, PSI, 2, method="structured")
    assert len(a.outcomes) == len(b.outcomes) == 16
    for o, p in a.match(b, 1e-9):
        assert abs(o.probability - p.probability) < 1e-12
        for k in ops:
            assert abs(o.means[k] - p.means[k]) < 1e-10


def test_noncommuting_family_rejected():
    lat = NoiseLattice(1, 0.1, d_sys=2)
    # an initial observable that does not commute with the field is fine, but
    # two initial observables that do not commute with each other are not
    obs = [ObservationProcess(StarMatrix.zeros(1, GENERATOR), SZ, "Z"),
           ObservationProcess(StarMatrix.zeros(1, GENERATOR), SX, "X")]
    with pytest.raises(NonCommutingError):
        conditional_expectation_oracle(lat, spin_Z(), obs, {"p3": SZ}, PSI, 0)


def test_oracle_table_json_round_trip():
    lat = NoiseLattice(1, 0.05, d_sys=2)
    tab = conditional_expectation_oracle(lat, spin_Z(), [ObservationProcess.quadrature()], {"p3": SZ}, PSI, 1)
    data = json.loads(tab.to_json())
    assert data["t_index"] == 1
    assert len(data["outcomes"]) == 2


# caps ------------------------------------------------------------------------------------


def test_dimension_cap(monkeypatch):
    with pytest.raises(DimensionCapError):
        NoiseLattice(30, 0.1)
    monkeypatch.setenv("QSFILTER_DIM_CAP", "64")
    with pytest.raises(DimensionCapError):
        NoiseLattice(6, 0.1)
    assert NoiseLattice(5, 0.1).total_dim == 64


def test_dense_cap_guards_dense_operators(monkeypatch):
    monkeypatch.setenv("QSFILTER_DENSE_CAP", "16")
    lat = NoiseLattice(4, 0.1)
    with pytest.raises(DimensionCapError):
        lat.identity()
    # vector evolution does not need dense matrices
    assert len(evolve_vector(lat, spin_Z(), PSI)) == 5
