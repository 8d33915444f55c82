import numpy as np
import pytest

from fbsdelab.errors import MeshDomainError
from fbsdelab.pdegrid import (
    SpaceTimeMesh, cross_validate, evaluate, evaluate_many, grid_from_function, make_mesh,
    read_binary, solve_fd, write_binary, write_csv,
)
from fbsdelab.problem import load_problem


def problem(n=1, b="0", sigma="sqrt(2)", drivers=None, terminals=None, T=1.0):
    return load_problem({"n": n, "T": T, "b": b, "sigma": sigma,
                         "drivers": drivers or ["0"] * n, "terminals": terminals or ["x"] * n})


@pytest.mark.parametrize("scheme", ["semi_implicit", "explicit"])
def test_linear_data_is_invariant(scheme):
    spec = problem()
    sol = solve_fd(spec, make_mesh(spec, -5, 5, 99, scheme=scheme), scheme)
    np.testing.assert_allclose(sol.values[0], np.broadcast_to(sol.mesh.x, sol.values[0].shape), atol=1e-12)


@pytest.mark.parametrize("scheme", ["semi_implicit", "explicit"])
def test_heat_quadratic(scheme):
    spec = problem(terminals=["x^2"])
    sol = solve_fd(spec, make_mesh(spec, -10, 10, 200, scheme=scheme), scheme)
    T, X = np.meshgrid(sol.mesh.t, sol.mesh.x, indexing="ij")
    inside = np.abs(X) <= 2.9
    err = np.abs(sol.values[0] - (X ** 2 + 2 * (1 - T)))[inside]
    assert err.max() <= 1e-3


def test_coupled_linear_constant_in_x():
    spec = problem(n=2, sigma="0", drivers=["y2", "y1"], terminals=["1", "1"])
    sol = solve_fd(spec, SpaceTimeMesh(-8, 8, 160, 1000, 1.0))
    exact = np.exp(1 - sol.mesh.t)[:, None]
    for i in range(2):
        assert np.max(np.abs(sol.values[i] - exact)) <= 1e-4


def test_explicit_scheme_refuses_unstable_mesh():
    spec = problem()
    from fbsdelab.errors import StabilityError
    with pytest.raises(StabilityError):
        solve_fd(spec, SpaceTimeMesh(-5, 5, 99, 2, 1.0), "explicit")


def test_interpolation():
    mesh = SpaceTimeMesh(-2, 2, 39, 10, 1.0)
    sol = grid_from_function([lambda t, x: 3 * x - t], mesh)
    assert evaluate(sol, mesh.t[4], mesh.x[7]) == sol.values[0, 4, 7]
    mid = 0.5 * (mesh.x[7] + mesh.x[8])
    assert evaluate(sol, mesh.t[4], mid) == pytest.approx(0.5 * (sol.values[0, 4, 7] + sol.values[0, 4, 8]))
    quad = grid_from_function([lambda t, x: x ** 2 + 2 * (1 - t)], mesh)
    xs = np.linspace(-1.93, 1.87, 17)
    err = np.abs(evaluate_many(quad, 0.37, xs) - (xs ** 2 + 2 * 0.63))
    assert err.max() <= mesh.dx ** 2
    with pytest.raises(MeshDomainError):
        evaluate(sol, 0.5, 3.0)
    with pytest.raises(MeshDomainError):
        evaluate(sol, 0.5, 0.0, component=1)


def test_binary_and_csv_export(tmp_path):
    spec = problem(n=2, drivers=["y2", "-y1"], terminals=["sin(x)", "x"])
    sol = solve_fd(spec, SpaceTimeMesh(-3, 3, 29, 20, 1.0))
    write_binary(sol, tmp_path / "g.fbgd")
    back = read_binary(tmp_path / "g.fbgd")
    assert back.mesh == sol.mesh and back.scheme == sol.scheme
    assert back.values.tobytes() == sol.values.tobytes()
    write_csv(sol, tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 21 * 31


def test_cross_validation_affine():
    spec = problem(sigma="1")
    grid = solve_fd(spec, make_mesh(spec, -6, 6, 119))
    cv = cross_validate(spec, grid, [(0.0, -1.0), (0.5, 0.3)], paths=4000, steps=16, seed=1)
    assert len(cv.rows) == 2
    assert cv.max_discrepancy <= 5e-2
    with pytest.raises(MeshDomainError):
        cross_validate(spec, grid, [(1.0, 0.0)], paths=10, steps=2)
