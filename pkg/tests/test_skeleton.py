import json

import numpy as np
import pytest
import scipy.integrate
from scipy.special import lambertw

from conftest import scalar_problem
from ldplab.control import Control, MarkSpace, q_cost
from ldplab.errors import ConfigurationError
from ldplab.operators import AffineNoise, BurgersDrift, PLaplaceDrift, ScalarLinearDrift
from ldplab.skeleton import (
    RATIO_LIMIT,
    SkeletonProblem,
    Trajectory,
    apriori_bound,
    contraction_window,
    control_drift,
    drift_only,
    solve_inner,
    solve_skeleton,
)

from oracles import scalar_path


def test_control_drift_examples(scalar):
    for c, expect in [(2.0, 1.0), (1.0, 0.0), (0.0, -1.0)]:
        g = Control.constant(c, 1.0)
        np.testing.assert_allclose(control_drift(scalar, g, 0.3, np.array([5.0])), [expect])


def test_control_drift_two_marks():
    drift = ScalarLinearDrift(1.0)
    noise = AffineNoise(drift.space, [1.0, 3.0], kappa=0.5)
    p = SkeletonProblem(drift.space, drift, noise, MarkSpace([0, 1], [0.5, 2.0]), [1.0], 1.0)
    g = Control([0.0, 1.0], [[3.0, 0.5]])
    v = np.array([2.0])
    expect = 0.5 * 1.0 * (1 + 0.5 * 2) * 2.0 + 2.0 * 3.0 * (1 + 0.5 * 2) * (-0.5)
    np.testing.assert_allclose(control_drift(p, g, 0.5, v), [expect])


def test_inner_map_frozen_constant_path():
    # zero drift: Z(t) = x + (t - a) Σ ν σ (g - 1)
    drift = ScalarLinearDrift(0.0, theta=1.0, c_growth=1.0)
    noise = AffineNoise(drift.space, [0.7])
    p = SkeletonProblem(drift.space, drift, noise, MarkSpace([0.0], [2.0]), [0.5], 1.0)
    times = np.linspace(0.2, 0.8, 61)
    J = Trajectory(times, np.full((61, 1), 0.5))
    Z = solve_inner(p, J, Control.constant(2.0, 1.0))
    np.testing.assert_allclose(Z.states[:, 0], 0.5 + (times - 0.2) * 1.4, rtol=1e-12)


def test_inner_map_zero_forcing_is_drift_only(scalar):
    dt = 1e-3
    ref = drift_only(scalar, dt)
    J = Trajectory(ref.time_grid, np.zeros_like(ref.states) + 1.0)
    Z = solve_inner(scalar, J, Control.constant(1.0, 1.0))
    np.testing.assert_allclose(Z.states, ref.states, rtol=1e-14)


def test_closed_form_fixed_point(scalar):
    res = solve_skeleton(scalar, Control.constant(2.0, 1.0), dt=1e-4)
    assert np.max(np.abs(res.trajectory.states - 1.0)) < 1e-12


@pytest.mark.parametrize("dt", [1e-3, 1e-4])
def test_closed_form_first_order(dt):
    p = scalar_problem(x0=0.0)
    res = solve_skeleton(p, Control.constant(2.0, 1.0), dt=dt)
    exact = scalar_path(res.trajectory.time_grid, 0.0, 1.0, 1.0)
    err = np.max(np.abs(res.trajectory.states[:, 0] - exact))
    assert err <= dt


def test_unit_control_reproduces_drift_only(scalar):
    res = solve_skeleton(scalar, Control.constant(1.0, 1.0), dt=1e-3)
    ref = drift_only(scalar, 1e-3)
    np.testing.assert_allclose(res.trajectory.states, ref.states, rtol=1e-12)
    assert res.max_iterations == 1


def test_window_covers_horizon_without_lipschitz_term(scalar):
    times = scalar.grid(1e-3)
    assert contraction_window(scalar, Control.constant(1.0, 1.0), 0, times=times) == len(times) - 1
    # state-independent noise: G_f = 0 for any control
    assert contraction_window(scalar, Control.constant(5.0, 1.0), 0, times=times) == len(times) - 1


def test_doubling_lipschitz_halves_window():
    dt = 1e-4
    lengths = []
    for sigma in (1.0, 2.0):
        p = scalar_problem(sigma=sigma, kappa=1.0, base=0.0, F=0.0)
        times = p.grid(dt)
        end = contraction_window(p, Control.constant(2.0, 1.0), 0, times=times)
        lengths.append(times[end])
    # G l exp(G l) = 1/2 with G = σ
    w = lambertw(0.5).real
    assert lengths[0] == pytest.approx(w, abs=2 * dt)
    assert lengths[1] == pytest.approx(w / 2, abs=2 * dt)


def test_window_too_short_raises():
    p = scalar_problem(sigma=1e4, kappa=1.0)
    with pytest.raises(ConfigurationError):
        solve_skeleton(p, Control.constant(2.0, 1.0), dt=0.1)


def test_state_dependent_uniqueness_and_ratios(rng):
    p = scalar_problem(x0=0.3, sigma=1.5, kappa=0.8)
    g = Control(np.linspace(0, 1, 5), rng.uniform(0, 3, (4, 1)))
    a = solve_skeleton(p, g, dt=1e-3)
    times = a.trajectory.time_grid
    b = solve_skeleton(p, g, dt=1e-3, initial_guess=Trajectory(times, rng.standard_normal((len(times), 1)) * 5))
    assert a.trajectory.sup_distance(b.trajectory, p.space) <= 10 * 1e-10
    assert a.max_ratio <= RATIO_LIMIT
    assert len(a.windows) >= 2
    assert a.windows[0][0] == 0.0 and a.windows[-1][1] == pytest.approx(1.0)


def test_residual_first_order():
    p = scalar_problem(x0=0.3, sigma=1.5, kappa=0.8)
    g = Control(np.array([0.0, 0.5, 1.0]), [[2.0], [0.5]])
    r1 = solve_skeleton(p, g, dt=2e-3).residual
    r2 = solve_skeleton(p, g, dt=1e-3).residual
    assert 1.6 < r1 / r2 < 2.4


@pytest.mark.parametrize(
    "drift",
    [PLaplaceDrift(8, 3.0), BurgersDrift(12, 0.2), PLaplaceDrift(8, 2.0)],
    ids=["p3", "burgers", "p2"],
)
def test_pde_skeleton_against_ode_solver(drift):
    # independent route: a stiff ODE solver on y' = A(y) + ν f(y)(c - 1) with constant c
    noise = AffineNoise(drift.space, [0.8], kappa=0.5)
    x = np.arange(drift.space.dim) / drift.space.dim
    x0 = np.sin(2 * np.pi * x)
    p = SkeletonProblem(drift.space, drift, noise, MarkSpace([0.0], [1.0]), x0, 0.5)
    c = 1.8
    res = solve_skeleton(p, Control.constant(c, 0.5), dt=5e-4)
    rhs = lambda t, y: drift.vector_field(t, y) + 0.8 * (c - 1.0) * (1.0 + 0.5 * y)
    ref = scipy.integrate.solve_ivp(rhs, (0, 0.5), x0, method="Radau", rtol=1e-10, atol=1e-12, dense_output=True)
    exact = ref.sol(res.trajectory.time_grid).T
    err = np.max(p.space.h_norm(res.trajectory.states - exact))
    scale = np.max(p.space.h_norm(exact))
    assert err < 0.02 * scale
    assert res.max_ratio <= RATIO_LIMIT


def test_apriori_bound_examples():
    p = scalar_problem(x0=0.0, sigma=0.0, F=0.0)
    assert apriori_bound(p, 3.0) == 0.0
    p = scalar_problem(x0=0.0, sigma=0.0, F=1.0, T=2.0)
    assert apriori_bound(p, 3.0) == pytest.approx(2.0 * np.exp(2.0))
    p = scalar_problem(x0=1.0, sigma=1.0, kappa=0.5)
    assert apriori_bound(p, 3.0) < apriori_bound(p, 5.0)


def test_energy_below_apriori_bound(rng):
    p = scalar_problem(x0=1.0, sigma=1.0, kappa=0.5)
    CN = apriori_bound(p, 5.0)
    for _ in range(10):
        g = Control(np.linspace(0, 1, 9), rng.uniform(0, 4, (8, 1)))
        if q_cost(p.ms, g) > 5.0:
            continue
        assert solve_skeleton(p, g, dt=1e-3).energy <= 1.1 * CN


def test_trajectory_roundtrip(tmp_path, scalar):
    res = solve_skeleton(scalar, Control.constant(2.0, 1.0), dt=0.1)
    traj = res.trajectory
    path = tmp_path / "t.csv"
    traj.to_csv(path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "t,x0"
    assert len(rows) == len(traj.time_grid) + 1
    data = json.loads(traj.to_json())
    np.testing.assert_allclose(data["states"], traj.states)
    diag = res.diagnostics()
    assert set(diag) >= {"windows", "iterations", "contraction_ratios", "max_ratio", "energy", "residual"}
    np.testing.assert_allclose(traj.interpolate(np.array([0.05]))[0], traj.states[0] * 0.5 + traj.states[1] * 0.5)


def test_horizon_mismatch_rejected(scalar):
    with pytest.raises(ConfigurationError):
        solve_skeleton(scalar, Control.constant(2.0, 2.0))
