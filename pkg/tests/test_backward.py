import numpy as np
import pytest

from fbsdelab.backward import (
    comparison_certificate, local_expansion_probe, solve_lsmc, solve_picard,
)
from fbsdelab.backward.regression import Projector
from fbsdelab.errors import NonConvergenceError, SingularDesignError
from fbsdelab.forward import simulate
from fbsdelab.mollify import mollify
from fbsdelab.problem import load_problem


def problem(n=1, T=1.0, b="0", sigma="1", drivers=None, terminals=None):
    return load_problem({"n": n, "T": T, "b": b, "sigma": sigma,
                         "drivers": drivers or ["0"] * n, "terminals": terminals or ["x"] * n})


def test_projector_reproduces_cubic_and_collapses_on_point_mass():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(5000)
    y = 1 - 2 * x + 0.5 * x ** 3
    fit, _ = Projector(x, 3).project(y)
    np.testing.assert_allclose(fit, y, atol=1e-10)
    point = Projector(np.full(100, 2.0), 3)
    fit, _ = point.project(np.arange(100.0))
    np.testing.assert_allclose(fit, 49.5)


def test_projector_rejects_ill_conditioned_design():
    x = np.concatenate([np.zeros(999), [1.0]])
    with pytest.raises(SingularDesignError):
        Projector(x, 12)


def test_martingale_property():
    spec = problem()
    ens = simulate(spec, 0.0, 0.0, 64, 20_000, seed=12)
    sol = solve_lsmc(spec, ens)
    rms = np.sqrt(np.mean((sol.Y[0] - ens.paths) ** 2, axis=0))
    assert rms.max() <= 5e-2
    np.testing.assert_allclose(sol.Z[0].mean(), 1.0, atol=5e-2)


def test_decoupled_constant_drivers():
    spec = problem(n=2, sigma="0", drivers=["1", "2"], terminals=["0", "0"])
    ens = simulate(spec, 0.0, 0.0, 32, 10, seed=0)
    sol = solve_lsmc(spec, ens)
    left = 1.0 - ens.grid.nodes
    np.testing.assert_allclose(sol.Y[0], np.broadcast_to(left, sol.Y[0].shape), atol=1e-12)
    np.testing.assert_allclose(sol.Y[1], np.broadcast_to(2 * left, sol.Y[1].shape), atol=1e-12)


def test_coupled_linear_exponential():
    spec = problem(n=2, sigma="0", drivers=["y2", "y1"], terminals=["1", "1"])
    sol = solve_lsmc(spec, simulate(spec, 0.0, 0.0, 64, 10, seed=0))
    exact = np.exp(1.0 - sol.grid.nodes)
    rel = np.abs(sol.Y[:, 0, :] - exact) / exact
    assert rel.max() <= 1e-2


def test_picard_zero_driver_converges_at_once():
    spec = problem()
    sol = solve_picard(spec, simulate(spec, 0.0, 0.0, 16, 2000, seed=1))
    assert sol.picard_iterations == 1 and sol.residual_history == (0.0,)


def test_picard_contracts_and_matches_lsmc():
    spec = problem(n=2, T=0.5, drivers=["y2", "y1"], terminals=["1", "1"])
    ens = simulate(spec, 0.0, 0.0, 32, 4000, seed=2)
    pic = solve_picard(spec, ens, tol=1e-12)
    hist = np.array(pic.residual_history)
    assert np.all(hist[1:] / hist[:-1] < 1)
    np.testing.assert_allclose(pic.Y, solve_lsmc(spec, ens).Y, atol=1e-10)


def test_picard_reports_history_on_failure():
    spec = problem(n=2, T=0.5, drivers=["y2", "y1"], terminals=["1", "1"])
    with pytest.raises(NonConvergenceError) as info:
        solve_picard(spec, simulate(spec, 0.0, 0.0, 16, 500, seed=2), max_iter=2, tol=1e-14)
    assert len(info.value.residual_history) == 2


def test_comparison_identical_problems():
    spec = problem(drivers=["-y1 + sin(x)"], terminals=["abs(x)"])
    ens = simulate(spec, 0.0, 0.0, 32, 4000, seed=3)
    cert = comparison_certificate(spec, spec, ens, audit_samples=2000)
    assert cert.violation_count == 0
    assert np.all(cert.mean_gap == 0)
    assert cert.representation_gap["Y1"]["residual"] == 0


def test_comparison_shifted_terminal_is_ordered():
    drivers = ["0.5*y2 - y1", "0.5*y1 - y2"]
    low = problem(n=2, drivers=drivers, terminals=["sin(x)", "cos(x)"])
    high = problem(n=2, drivers=drivers, terminals=["sin(x) + 1", "cos(x) + 1"])
    cert = comparison_certificate(low, high, simulate(low, 0.0, 0.0, 32, 4000, seed=4), audit_samples=4000)
    assert cert.ordering_ok and cert.bound_ok and cert.hypotheses_ok
    assert np.all(cert.mean_gap[:, 0] > 0)


def test_comparison_deterministic_driver_gap():
    base = problem(sigma="0", drivers=["1"], terminals=["0"])
    shifted = problem(sigma="0", drivers=["1.5"], terminals=["0"])
    cert = comparison_certificate(base, shifted, simulate(base, 0.0, 0.0, 1000, 4, seed=0), audit_samples=500)
    nodes = np.linspace(0.0, 1.0, 1001)
    np.testing.assert_allclose(cert.mean_gap[0], 0.5 * (1 - nodes), atol=2e-3)


def test_comparison_flags_violated_monotonicity():
    a = problem(n=2, drivers=["-y2", "-y1"], terminals=["0", "0"])
    b = problem(n=2, drivers=["-y2", "-y1"], terminals=["1", "1"])
    cert = comparison_certificate(a, b, simulate(a, 0.0, 0.0, 16, 1000, seed=5), audit_samples=2000)
    assert not cert.hypotheses_ok
    assert "hypotheses-violated" in cert.flags


def test_expansion_vanishes_for_constant_gamma_and_zero_drivers():
    probe = local_expansion_probe(problem(), ["3"], 0.0, 0.2, [0.1, 0.05], steps=16, n_paths=2000,
                                  substeps=50)
    assert np.all(probe.gaps == 0)


def test_expansion_identity_and_rate_on_smooth_problem():
    raw = problem(b="abs(x)", sigma="1 + 0.5*abs(x)", drivers=["-abs(y1) + abs(x)"], terminals=["abs(x)"])
    probe = local_expansion_probe(mollify(raw, 0.2), ["x^2 + 1"], 0.0, 0.3, [0.1, 0.05, 0.025, 0.0125],
                                  steps=32, n_paths=4000, substeps=200)
    assert probe.max_identity_residual <= 1e-8
    assert probe.rate >= 1.4
