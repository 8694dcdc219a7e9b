from __future__ import annotations

import numpy as np
import pytest

from qsfilter.ensemble import coarsen, draw_normals
from qsfilter.spin import (
    SpinScenario,
    accumulated_strength,
    collapse_check,
    mean_ode,
    precession,
    simulate_spin,
    simulate_spin_linear,
    spin_model,
    vector_schedule,
)


def test_scenario_validation():
    with pytest.raises(ValueError):
        SpinScenario(p0=(1.0, 0.5, 0.0))
    with pytest.raises(ValueError):
        SpinScenario(dt=0.0)
    with pytest.raises(ValueError):
        SpinScenario(T=1.0, dt=0.3).n_steps
    assert SpinScenario(T=1.0, dt=1e-3).n_steps == 1000


def test_vector_schedule_table_is_left_continuous():
    f, td = vector_schedule({"t": [0.0, 0.5], "values": [[0, 0, 1], [1, 0, 0]]})
    assert td
    np.testing.assert_array_equal(f(0.49), [0, 0, 1])
    np.testing.assert_array_equal(f(0.5), [1, 0, 0])
    with pytest.raises(ValueError):
        vector_schedule({"t": [0.5, 0.0], "values": [[0, 0, 1], [1, 0, 0]]})
    with pytest.raises(ValueError):
        vector_schedule((1.0, 2.0))


def test_precession_closed_form():
    sc = SpinScenario(u=(0.3, -0.5, 1.0), r=[(0, 0, 0)], p0=(0.6, 0.0, 0.8), T=1.0, dt=1e-4)
    rec = simulate_spin(sc, drift="exact")
    ref = precession(sc.p0, sc.u, rec.t)
    assert np.max(np.abs(rec.e[:, 1:] - ref)) < 1e-6
    assert np.max(np.abs(np.linalg.norm(rec.e[:, 1:], axis=1) - 1.0)) < 1e-6
    # the default Euler drift is first order
    rec = simulate_spin(sc)
    assert np.max(np.abs(rec.e[:, 1:] - ref)) < 1e-4


def test_precession_sense_against_brute_force():
    # dp/dt = u x p: a quarter turn about z takes x to y
    p = precession((1.0, 0.0, 0.0), (0.0, 0.0, 1.0), [np.pi / 2])[0]
    np.testing.assert_allclose(p, (0, 1, 0), atol=1e-15)


def test_pure_state_stays_pure():
    sc = SpinScenario(r=[(0, 0, 2)], p0=(1.0, 0.0, 0.0), T=1.0, dt=1e-4)
    dW = draw_normals(0, range(20), sc.n_steps, 1, sc.dt)
    rec = simulate_spin(sc, dW, scheme="milstein")
    assert np.max(np.abs(rec.purity - 1.0)) < 5 * np.sqrt(sc.dt)
    mon = collapse_check(rec, sc, scheme="milstein")
    assert np.max(np.abs(mon.residual)) < 5 * np.sqrt(sc.dt)
    # Euler drifts off the sphere on some paths; projection keeps it inside the ball
    rec = simulate_spin(sc, dW, project=True)
    assert rec.purity.max() <= 1.0 + 1e-12


def test_euler_purity_excursion_shrinks_with_dt():
    sc = SpinScenario(r=[(0, 0, 2)], p0=(1.0, 0.0, 0.0), T=0.5, dt=4e-4)
    dW = draw_normals(0, range(20), sc.n_steps, 1, sc.dt)
    errs = []
    for factor in (4, 1):
        s = sc.with_dt(sc.dt / factor)
        fine = draw_normals(0, range(20), s.n_steps, 1, s.dt) if factor > 1 else dW
        errs.append(np.median(np.max(np.abs(simulate_spin(s, fine).purity - 1.0), axis=0)))
    assert errs[0] < errs[1]


def test_collapse_residual_and_convergence():
    sc = SpinScenario(r=[(0, 0, 2)], p0=(0.0, 0.0, 0.0), T=1.0, dt=1e-4)
    dW = draw_normals(7, range(50), sc.n_steps, 1, sc.dt)
    errs = []
    for factor in (4, 2, 1):
        s = sc.with_dt(sc.dt * factor)
        rec = simulate_spin(s, coarsen(dW, factor), scheme="milstein")
        errs.append(collapse_check(rec, s, scheme="milstein").max_abs.mean())
    assert errs[-1] < 0.05
    order = np.log(errs[0] / errs[-1]) / np.log(4)
    assert order >= 0.5


def test_euler_collapse_residual_converges():
    sc = SpinScenario(r=[(0, 0, 2)], p0=(0.0, 0.0, 0.0), T=0.5, dt=2.5e-4)
    dW = draw_normals(7, range(50), sc.n_steps, 1, sc.dt)
    errs = []
    for factor in (4, 1):
        s = sc.with_dt(sc.dt * factor)
        errs.append(collapse_check(simulate_spin(s, coarsen(dW, factor)), s).max_abs.mean())
    assert errs[1] < errs[0]


def test_no_measurement_no_collapse():
    sc = SpinScenario(u=(0.2, 0, 0), r=[(0, 0, 0)], p0=(0.3, 0.0, 0.1), T=0.5, dt=1e-3)
    rec = simulate_spin(sc)
    mon = collapse_check(rec, sc)
    f, rho = simulate_spin_linear(sc, rec.dY)
    np.testing.assert_allclose(rho, 1.0)
    np.testing.assert_allclose(f, rec.e[:, 1:], atol=1e-12)
    # only the O(dt) radial growth of the Euler rotation remains
    assert np.max(np.abs(mon.residual)) < 1e-6
    np.testing.assert_allclose(mon.lam, 0.0)


def test_linear_dual_tracks_nonlinear_pathwise():
    sc = SpinScenario(u=(0.5, 0, 0), r=[(0, 0, 2)], p0=(0.2, 0.1, 0.3), T=1.0, dt=1e-4)
    dW = draw_normals(3, range(100), sc.n_steps, 1, sc.dt)
    for scheme, q in (("euler", 95), ("milstein", 100)):
        rec = simulate_spin(sc, dW, scheme=scheme)
        f, rho = simulate_spin_linear(sc, rec.dY, scheme="milstein")
        err = np.max(np.abs(f / rho[..., None] - rec.e[..., 1:]), axis=(0, 2))
        assert np.percentile(err, q) < 5 * np.sqrt(sc.dt), scheme


def test_linear_weight_has_unit_mean_under_reference_measure():
    # with Y a standard Wiener process, rho is a likelihood ratio
    sc = SpinScenario(u=(1.0, 0, 0), r=[(0, 0, 1)], p0=(0.0, 0.0, 1.0), T=1.0, dt=1e-3)
    M = 4000
    dY = draw_normals(11, range(M), sc.n_steps, 1, sc.dt)
    f, rho = simulate_spin_linear(sc, dY)
    err = rho[-1].std(ddof=1) / np.sqrt(M)
    assert abs(rho[-1].mean() - 1.0) < 3 * err
    # rho-weighted means reproduce the unconditional mean dynamics
    want = mean_ode(sc, [sc.T])[0]
    f_err = f[-1].std(axis=0, ddof=1) / np.sqrt(M)
    assert np.all(np.abs(f[-1].mean(axis=0) - want) < 4 * f_err + 1e-3)


def test_ball_invariance_of_linear_pair():
    sc = SpinScenario(u=(0.3, 0, 0.2), r=[(0, 0, 2), (1, 0, 0)], p0=(0.1, 0.2, 0.3), T=1.0, dt=1e-3)
    dY = draw_normals(2, range(200), sc.n_steps, 2, sc.dt)
    f, rho = simulate_spin_linear(sc, dY, scheme="milstein")
    excess = np.linalg.norm(f, axis=-1) / rho - 1.0
    assert excess.max() <= 5 * np.sqrt(sc.dt)


def test_terminal_outcomes_split_evenly():
    sc = SpinScenario(r=[(0, 0, 2)], p0=(0.0, 0.0, 0.0), T=5.0, dt=1e-3)
    M = 10000
    dW = draw_normals(21, range(M), sc.n_steps, 1, sc.dt)
    rec = simulate_spin(sc, dW, stride=sc.n_steps, scheme="milstein")
    p3 = rec.e[-1, :, 3]
    assert np.all(np.abs(np.abs(p3) - 1.0) < 1e-3)
    assert abs(np.mean(p3 > 0) - 0.5) < 0.02


def test_conserved_component_on_average():
    sc = SpinScenario(r=[(0, 0, 1.5)], p0=(0.3, 0.0, 0.4), T=1.0, dt=1e-3)
    M = 4000
    dW = draw_normals(5, range(M), sc.n_steps, 1, sc.dt)
    rec = simulate_spin(sc, dW, stride=100)
    mean = rec.e[:, :, 3].mean(axis=1)
    err = rec.e[:, :, 3].std(axis=1, ddof=1) / np.sqrt(M)
    assert np.all(np.abs(mean - 0.4) <= 3 * err + 1e-12)


def test_accumulated_strength():
    sc = SpinScenario(r=[(0, 0, 2), (1, 0, 0)], T=1.0, dt=0.1)
    np.testing.assert_allclose(accumulated_strength(sc, [0.0, 0.5, 1.0]), [0.0, 2.5, 5.0])
    td = SpinScenario(r=[{"t": [0.0, 0.5], "values": [[0, 0, 1], [0, 0, 2]]}], T=1.0, dt=0.1)
    np.testing.assert_allclose(accumulated_strength(td, [1.0]), [0.5 + 2.0])


def test_mean_ode_time_dependent_matches_constant():
    const = SpinScenario(u=(0.4, 0, 0.3), r=[(0, 0, 1)], p0=(0, 0, 1), T=1.0, dt=0.1)
    tabled = SpinScenario(u={"t": [0.0], "values": [[0.4, 0, 0.3]]}, r=[(0, 0, 1)], p0=(0, 0, 1), T=1.0, dt=0.1)
    t = np.linspace(0, 1, 5)
    np.testing.assert_allclose(mean_ode(tabled, t), mean_ode(const, t), atol=1e-9)


def test_time_dependent_spin_model_samples_left_endpoint():
    m = spin_model({"t": [0.0, 0.5], "values": [[0, 0, 0], [0, 0, 2]]}, [(0, 0, 0)])
    assert m.time_dependent
    np.testing.assert_allclose(np.diag(m.hamiltonian(0.49)), [0, 0])
    np.testing.assert_allclose(np.diag(m.hamiltonian(0.5)).real, [1, -1])
