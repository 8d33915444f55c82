import math

import numpy as np
import pytest

from fbsdelab.errors import ConfigError
from fbsdelab.mollify import error_sweep, mollify, mollify_eval
from fbsdelab.problem import load_problem

ROOT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def one_dim(b="0", sigma="1", driver="0", terminal="x"):
    return load_problem({"n": 1, "T": 1.0, "b": b, "sigma": sigma, "drivers": [driver], "terminals": [terminal]})


@pytest.mark.parametrize("eps", [0.3, 0.05])
def test_affine_map_is_fixed(eps):
    assert mollify_eval(mollify(one_dim(b="2*x"), eps), "b", (0.0, 1.5)) == pytest.approx(3.0, abs=1e-12)


@pytest.mark.parametrize("eps", [0.2, 0.1, 0.025])
def test_abs_at_origin_is_folded_gaussian_mean(eps):
    value = mollify_eval(mollify(one_dim(b="abs(x)"), eps), "b", (0.0, 0.0))
    assert value == pytest.approx(eps * ROOT_2_OVER_PI, rel=1e-10)


def test_constant_is_unchanged():
    m = mollify(one_dim(b="1.25"), 0.4)
    for x in (-3.0, 0.0, 2.5):
        assert mollify_eval(m, "b", (0.1, x)) == pytest.approx(1.25, abs=1e-14)


def test_sine_has_closed_form_gaussian_damping():
    eps = 0.3
    value = mollify_eval(mollify(one_dim(b="sin(x)"), eps), "b", (0.0, 0.7))
    assert value == pytest.approx(math.exp(-eps**2 / 2) * math.sin(0.7), rel=1e-10)


def test_driver_smoothing_in_y():
    eps = 0.1
    m = mollify(one_dim(driver="abs(y1)"), eps)
    assert mollify_eval(m, "f1", (0.0, 0.0, 0.0, 0.0)) == pytest.approx(eps * ROOT_2_OVER_PI, rel=1e-10)


def _probe_points(n=401):
    return [(0.0, x, 0.0, 0.0) for x in np.linspace(-3, 3, n)]


def test_sweep_affine_and_abs_rates():
    spec = one_dim(b="abs(x)", sigma="2*x + 1")
    rows = error_sweep(spec, [0.1, 0.05, 0.025], _probe_points(), coefficients=["b", "sigma"])
    for r in rows:
        if r["coefficient"] == "sigma":
            assert r["sup_error"] <= 1e-10
        else:
            assert r["ratio"] == pytest.approx(ROOT_2_OVER_PI, rel=0.05)
            assert r["argmax"]["x"] == pytest.approx(0.0, abs=1e-12)


def test_sweep_sine_error_decreases_with_eps():
    rows = error_sweep(one_dim(b="sin(x)"), [0.2, 0.1, 0.05, 0.025], _probe_points(), coefficients=["b"])
    errs = [r["sup_error"] for r in rows]
    assert all(a > b for a, b in zip(errs, errs[1:]))


def test_sweep_rejects_bad_widths():
    with pytest.raises(ValueError):
        error_sweep(one_dim(), [0.1, -0.1], _probe_points(3))
    with pytest.raises(ConfigError):
        mollify(one_dim(), 0.0)
