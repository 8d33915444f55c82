import numpy as np
import pytest

from fbsdelab.forward import TimeGrid, refine_increments, restart_ensemble, simulate
from fbsdelab.problem import load_problem


def dynamics(b, sigma, T=1.0):
    return load_problem({"n": 1, "T": T, "b": b, "sigma": sigma, "drivers": ["0"], "terminals": ["x"]})


def test_grid_nodes():
    g = TimeGrid(0.25, 1.0, 3)
    assert g.nodes[0] == 0.25 and g.nodes[-1] == 1.0
    np.testing.assert_allclose(np.diff(g.nodes), 0.25, rtol=1e-12)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 4)


def test_frozen_dynamics():
    e = simulate(dynamics("0", "0"), 0.0, 0.7, 16, 50, seed=1)
    assert np.all(e.paths == 0.7)


def test_deterministic_drift_is_exact():
    e = simulate(dynamics("1", "0"), 0.0, 0.3, 10, 20, seed=1)
    np.testing.assert_allclose(e.paths[:, -1], 1.3, rtol=0, atol=1e-14)


def test_brownian_moments():
    M = 100_000
    e = simulate(dynamics("0", "1"), 0.0, 0.5, 8, M, seed=5)
    xt = e.paths[:, -1]
    assert abs(xt.mean() - 0.5) < 4 / np.sqrt(M)
    assert xt.var() == pytest.approx(1.0, rel=0.05)


def test_worker_invariance_and_seed_sensitivity():
    spec = dynamics("-x", "1 + 0.1*sin(x)")
    a = simulate(spec, 0.0, 0.1, 32, 3000, seed=7, workers=1)
    b = simulate(spec, 0.0, 0.1, 32, 3000, seed=7, workers=4)
    c = simulate(spec, 0.0, 0.1, 32, 3000, seed=8)
    assert a.paths.tobytes() == b.paths.tobytes()
    assert not np.array_equal(a.paths, c.paths)


def test_prefix_of_paths_is_stable_under_path_count():
    spec = dynamics("0", "1")
    small = simulate(spec, 0.0, 0.0, 16, 1500, seed=3)
    large = simulate(spec, 0.0, 0.0, 16, 4000, seed=3)
    np.testing.assert_array_equal(small.paths, large.paths[:1500])


def test_ensemble_is_read_only():
    e = simulate(dynamics("0", "1"), 0.0, 0.0, 4, 10, seed=0)
    with pytest.raises(ValueError):
        e.paths[0, 0] = 1.0


def test_restart_starts_from_parent_state():
    spec = dynamics("0", "1")
    parent = simulate(spec, 0.0, 0.0, 8, 5, seed=2)
    kids = restart_ensemble(parent, 4, spec, 4, 200, seed=9, paths=[0, 3])
    assert set(kids) == {0, 3}
    for m, kid in kids.items():
        assert kid.grid.t0 == parent.grid.nodes[4]
        assert np.all(kid.paths[:, 0] == parent.paths[m, 4])
    again = restart_ensemble(parent, 4, spec, 4, 200, seed=9, paths=[3])
    assert again[3].paths.tobytes() == kids[3].paths.tobytes()


def test_refined_increments_sum_to_coarse():
    e = simulate(dynamics("0", "1"), 0.0, 0.0, 6, 40, seed=4)
    fine = refine_increments(e.dW, e.dt, 5, seed=1)
    np.testing.assert_allclose(fine.reshape(40, 6, 5).sum(axis=2), e.dW, atol=1e-14)


def test_invalid_start_time():
    with pytest.raises(ValueError):
        simulate(dynamics("0", "1"), 1.0, 0.0, 4, 10, seed=0)
