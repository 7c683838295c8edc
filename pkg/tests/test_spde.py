import csv
import json

import numpy as np
import pytest

from conftest import scalar_problem
from ldplab.control import Control, MarkSpace
from ldplab.errors import ConfigurationError, ResourceError
from ldplab.operators import AffineNoise, PLaplaceDrift, ScalarLinearDrift
from ldplab.skeleton import SkeletonProblem, drift_only, solve_skeleton
from ldplab.spde import SimConfig, coupled_simulate, simulate, simulate_batch


def test_zero_noise_is_deterministic():
    p = scalar_problem(x0=1.0, sigma=0.0)
    X = simulate(SimConfig(p, 0.1, dt=1e-3, seed=4))
    assert X.jump_count > 0
    # jump times refine the grid, so agreement with the flow is up to the O(dt) scheme error
    np.testing.assert_array_equal(X.states, X.left_limits)
    np.testing.assert_allclose(X.states[:, 0], np.exp(-X.time_grid), atol=1e-3)
    ref = drift_only(p, 1e-3)
    assert np.max(np.abs(X.interpolate(ref.time_grid) - ref.states)) < 1e-5


def test_mean_and_variance_oracles():
    eps, dt, P = 0.1, 2e-3, 10_000
    p = scalar_problem(x0=1.0)
    batch = simulate_batch(SimConfig(p, eps, dt=dt, seed=21), P, keep_grid=True)
    n = len(batch.time_grid) - 1
    for k in (n // 4, n // 2, n):
        t = batch.time_grid[k]
        x = batch.grid_states[k, :, 0]
        mean = np.exp(-t)
        var = eps * (1 - np.exp(-2 * t)) / 2
        assert abs(x.mean() - mean) < 3 * np.sqrt(var / P) + dt
        se_var = np.sqrt((np.mean((x - x.mean()) ** 4) - x.var() ** 2) / P)
        assert abs(x.var(ddof=1) - var) < 3 * se_var + dt * var


def test_reproducible():
    p = scalar_problem(x0=1.0, kappa=0.5)
    cfg = SimConfig(p, 0.05, dt=1e-2, seed=9, stream_id=3)
    a, b = simulate(cfg), simulate(cfg)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.time_grid, b.time_grid)
    c = simulate(SimConfig(p, 0.05, dt=1e-2, seed=10, stream_id=3))
    assert not np.array_equal(a.states[-1], c.states[-1])


@pytest.mark.parametrize("which", ["scalar", "p_laplace"])
def test_batch_matches_single_paths(which):
    if which == "scalar":
        p = scalar_problem(x0=1.0, sigma=1.0, kappa=0.5)
    else:
        drift = PLaplaceDrift(8, 3.0)
        noise = AffineNoise(drift.space, [1.0, 0.5], kappa=0.3)
        p = SkeletonProblem(drift.space, drift, noise, MarkSpace([0, 1], [1.0, 0.5]), np.sin(np.arange(8)), 0.5)
    psi = Control(np.array([0.0, p.T / 2, p.T]), np.full((2, p.ms.m), 1.0) * np.array([[2.0], [0.5]]))
    cfg = SimConfig(p, 0.1, psi, dt=p.T / 50, seed=17)
    batch = simulate_batch(cfg, 6)
    for i in range(6):
        single = simulate(SimConfig(p, 0.1, psi, dt=p.T / 50, seed=17, stream_id=i))
        np.testing.assert_allclose(batch.final_states[i], single.states[-1], rtol=1e-12, atol=1e-12)
        assert batch.jump_counts[i] == single.jump_count


def test_jumps_add_eps_f_of_left_limit():
    p = scalar_problem(x0=1.0, sigma=2.0, kappa=0.5)
    X = simulate(SimConfig(p, 0.05, dt=1e-2, seed=2))
    jump = ~np.isclose(X.states[:, 0], X.left_limits[:, 0], rtol=0, atol=0)
    assert jump.sum() == X.jump_count
    np.testing.assert_allclose(X.states[jump, 0] - X.left_limits[jump, 0], 0.05 * 2.0 * (1 + 0.5 * X.left_limits[jump, 0]))
    # between jumps the path is continuous: states equal left limits
    np.testing.assert_array_equal(X.states[~jump], X.left_limits[~jump])


def test_single_jump_deviation():
    # few jumps: right after the first jump X - Y moves by exactly ε f(X-)
    eps = 0.01
    p = scalar_problem(x0=0.0)
    psi = Control.constant(0.02, 1.0)
    for seed in range(50):
        cfg = SimConfig(p, eps, psi, dt=1e-3, seed=seed)
        X, Y, err = coupled_simulate(cfg)
        if X.jump_count == 1:
            break
    assert X.jump_count == 1
    i = int(np.nonzero(X.states[:, 0] != X.left_limits[:, 0])[0][0])
    y = Y.interpolate(X.time_grid[i : i + 1])[0, 0]
    before = X.left_limits[i, 0] - y
    after = X.states[i, 0] - y
    assert after - before == pytest.approx(eps, rel=1e-9)
    assert err >= abs(after) - 1e-12


def test_coupled_without_noise_matches_skeleton():
    p = scalar_problem(x0=0.5, sigma=0.0)
    X, Y, err = coupled_simulate(SimConfig(p, 0.1, dt=1e-3, seed=1))
    assert err < 1e-5


def test_batch_sup_error_and_outputs(tmp_path):
    p = scalar_problem(x0=1.0)
    cfg = SimConfig(p, 0.1, dt=1e-2, seed=3)
    Y = solve_skeleton(p, cfg.control, cfg.dt).trajectory
    batch = simulate_batch(cfg, 20, skeleton=Y)
    assert np.all(batch.sup_errors >= 0)
    path = tmp_path / "paths.csv"
    batch.to_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["path_id", "sup_error", "jump_count", "censored_flag"]
    assert len(rows) == 21
    summary = json.loads(batch.to_json())
    assert summary["n_paths"] == 20 and summary["censored"] == 0
    with pytest.raises(ConfigurationError):
        simulate_batch(SimConfig(p, 0.1, dt=2e-2, seed=3), 2, skeleton=Y)


def test_blowup_is_censored():
    drift = ScalarLinearDrift(-20.0, theta=1.0, c_growth=400.0)
    noise = AffineNoise(drift.space, [1.0])
    p = SkeletonProblem(drift.space, drift, noise, MarkSpace([0.0], [1.0]), [1.0], 1.0)
    cfg = SimConfig(p, 0.1, dt=1e-3, seed=0)
    assert simulate(cfg).censored
    batch = simulate_batch(cfg, 5)
    assert batch.censored.all() and batch.censored_fraction == 1.0


def test_cap_and_eps_validation():
    p = scalar_problem()
    with pytest.raises(ResourceError):
        simulate(SimConfig(p, 1e-4, dt=1e-2, cap=100))
    with pytest.raises(ConfigurationError):
        SimConfig(p, 1.5)
    with pytest.raises(ConfigurationError):
        SimConfig(p, 0.1, Control.constant(1.0, 2.0))
