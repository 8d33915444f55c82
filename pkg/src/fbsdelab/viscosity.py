"""Numerical sub/supersolution checks for grid candidates and a regularity audit.

At an interior node the test function for component i is the candidate's
discrete jet plus a curvature term::

    Gamma_i(s, y) = w_i + w_t (s - t) + w_x (y - x) + 0.5 w_xx (y - x)^2 + c * d^2,
    d^2 = (s - t)^2 + (y - x)^2

with ``+c`` touching from above (subsolution test) and ``-c`` from below
(supersolution test). Only the second x-derivative feels the curvature, so the
residual of the PDE at the touch point is

    R_i = w_t + 0.5 sigma^2 (w_xx +/- 2c) + b w_x + f_i(t, x, Gamma, sigma w_x),

with the other components of Gamma taken as the candidate's values at the
same node. A subsolution needs R_i >= -tol, a supersolution R_i <= tol.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _rng
from .errors import ConfigError, DomainError, SolverError

logger = logging.getLogger(__name__)

DEFAULT_CURVATURES = (1e-3, 1e-2, 1e-1)
BAND = 2
TIME_JETS = ("forward", "central")


@dataclass
class ViscosityReport:
    sub_ok: list
    super_ok: list
    worst_sub_residual: dict  # value plus location: component, k, j, t, x, curvature
    worst_super_residual: dict
    touch_points: list  # per component and check: (component, t, x, parameters)
    tolerance: float
    curvatures: list
    band: int
    time_jet: str
    nodes_checked: int

    @property
    def ok(self) -> bool:
        return all(self.sub_ok) and all(self.super_ok)

    def to_dict(self) -> dict:
        return {
            "sub_ok": self.sub_ok,
            "super_ok": self.super_ok,
            "worst_sub_residual": self.worst_sub_residual,
            "worst_super_residual": self.worst_super_residual,
            "touch_points": self.touch_points,
            "tolerance": self.tolerance,
            "curvatures": self.curvatures,
            "excluded_band_cells": self.band,
            "time_jet": self.time_jet,
            "nodes_checked": self.nodes_checked,
        }


def _jets(values, k, j, dt, dx, time_jet):
    """Discrete (w, w_t, w_x, w_xx) of all components at node index arrays (k, j)."""
    w = values[:, k, j]
    if time_jet == "forward":
        w_t = (values[:, k + 1, j] - w) / dt
    else:
        w_t = (values[:, k + 1, j] - values[:, k - 1, j]) / (2.0 * dt)
    w_x = (values[:, k, j + 1] - values[:, k, j - 1]) / (2.0 * dx)
    w_xx = (values[:, k, j + 1] - 2.0 * w + values[:, k, j - 1]) / (dx * dx)
    return w, w_t, w_x, w_xx


def base_residual(candidate, spec, component: int, k, j, time_jet: str = "forward") -> np.ndarray:
    """PDE residual of the unperturbed jet at nodes (k, j); add +/- sigma^2 c for curvature c."""
    m = candidate.mesh
    k = np.atleast_1d(np.asarray(k))
    j = np.atleast_1d(np.asarray(j))
    t = m.t[k]
    x = m.x[j]
    w, w_t, w_x, w_xx = _jets(candidate.values, k, j, m.dt, m.dx, time_jet)
    try:
        b = spec.drift(t, x)
        s = spec.diffusion(t, x)
        f = spec.driver(component, t, x, [w[q] for q in range(w.shape[0])], s * w_x[component])
    except DomainError as exc:
        raise SolverError(f"jet evaluation failed for component {component + 1}: {exc}") from exc
    i = component
    return w_t[i] + 0.5 * s * s * w_xx[i] + b * w_x[i] + f, s * s


def residual_at(candidate, spec, component: int, k: int, j: int, curvature: float,
                above: bool, time_jet: str = "forward") -> float:
    """Re-evaluate a single test: curvature added (above) or subtracted (below) at node (k, j)."""
    r0, s2 = base_residual(candidate, spec, component, [k], [j], time_jet)
    return float(r0[0] + (s2[0] if above else -s2[0]) * curvature)


def check_viscosity(candidate, spec, curvature_list: Sequence[float] = DEFAULT_CURVATURES,
                    tolerance: float = 1e-3, band: int = BAND, time_jet: str = "forward") -> ViscosityReport:
    """Check the sub- and supersolution inequalities at every interior node."""
    if not curvature_list or any(not c > 0 for c in curvature_list):
        raise ConfigError("curvature_list must be nonempty and positive")
    if time_jet not in TIME_JETS:
        raise ConfigError(f"time_jet must be one of {TIME_JETS}")
    m = candidate.mesh
    k_lo, k_hi = band, m.nt - band  # forward difference needs k + 1 <= nt
    j_lo, j_hi = 1 + band, m.nx - band
    if k_lo > k_hi - 1 or j_lo > j_hi:
        raise ConfigError(f"mesh too small for an interior margin of {band} cells")
    K, J = np.meshgrid(np.arange(k_lo, k_hi), np.arange(j_lo, j_hi + 1), indexing="ij")
    k, j = K.ravel(), J.ravel()
    c_min = float(min(curvature_list))
    sub_ok, super_ok, touch = [], [], []
    worst_sub = {"value": np.inf}
    worst_super = {"value": -np.inf}
    for i in range(candidate.n):
        r0, s2 = base_residual(candidate, spec, i, k, j, time_jet)
        # the smallest curvature gives the tightest test on each side
        r_sub = r0 + s2 * c_min
        r_sup = r0 - s2 * c_min
        if not (np.all(np.isfinite(r_sub)) and np.all(np.isfinite(r_sup))):
            q = int(np.argmax(~np.isfinite(r0)))
            raise SolverError(f"non-finite residual for component {i + 1} at node ({k[q]}, {j[q]})")
        qs, qp = int(np.argmin(r_sub)), int(np.argmax(r_sup))
        sub_ok.append(bool(r_sub[qs] >= -tolerance))
        super_ok.append(bool(r_sup[qp] <= tolerance))
        loc_s = {"value": float(r_sub[qs]), "component": i + 1, "k": int(k[qs]), "j": int(j[qs]),
                 "t": float(m.t[k[qs]]), "x": float(m.x[j[qs]]), "curvature": c_min}
        loc_p = {"value": float(r_sup[qp]), "component": i + 1, "k": int(k[qp]), "j": int(j[qp]),
                 "t": float(m.t[k[qp]]), "x": float(m.x[j[qp]]), "curvature": c_min}
        if loc_s["value"] < worst_sub["value"]:
            worst_sub = loc_s
        if loc_p["value"] > worst_super["value"]:
            worst_super = loc_p
        touch.append((i + 1, loc_s["t"], loc_s["x"], {"check": "sub", "curvature": c_min}))
        touch.append((i + 1, loc_p["t"], loc_p["x"], {"check": "super", "curvature": c_min}))
    report = ViscosityReport(sub_ok, super_ok, worst_sub, worst_super, touch, float(tolerance),
                             [float(c) for c in curvature_list], band, time_jet, int(k.size))
    logger.info("viscosity check: sub=%s super=%s (worst %.3e / %.3e)", sub_ok, super_ok,
                worst_sub["value"], worst_super["value"])
    return report


def write_worst_csv(report: ViscosityReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "component", "t", "x", "curvature", "residual"])
        for check, loc in (("sub", report.worst_sub_residual), ("super", report.worst_super_residual)):
            w.writerow([check, loc["component"], loc["t"], loc["x"], loc["curvature"], loc["value"]])


# -- regularity -----------------------------------------------------------------

@dataclass
class RegularityReport:
    x_lipschitz_estimate: float
    t_holder_exponent_fit: float | None
    t_holder_constant_fit: float | None
    linear_growth_ratio: float
    flags: list
    samples: dict = field(default_factory=dict)
    predicted_x_lipschitz: float | None = None

    @property
    def time_constant(self) -> bool:
        return "time-constant" in self.flags

    def to_dict(self) -> dict:
        return {
            "x_lipschitz_estimate": self.x_lipschitz_estimate,
            "t_holder_exponent_fit": self.t_holder_exponent_fit,
            "t_holder_constant_fit": self.t_holder_constant_fit,
            "linear_growth_ratio": self.linear_growth_ratio,
            "predicted_x_lipschitz": self.predicted_x_lipschitz,
            "flags": self.flags,
            "samples": self.samples,
        }


def predicted_x_lipschitz(audit, T: float) -> float:
    """Rough a-priori Lipschitz bound in x from audited constants.

    Combines the L^2 flow estimate ``exp((L_b + L_sigma^2 / 2) T)`` for the
    forward state with a Gronwall bound for the backward system.
    """
    lx = np.exp((audit.lipschitz_b + 0.5 * audit.lipschitz_sigma ** 2) * T)
    lip = audit.lipschitz_f_per_arg
    l_fx = max(v["x"] for v in lip.values())
    l_fy = max(sum(val for arg, val in v.items() if arg.startswith("y")) for v in lip.values())
    l_fz = max(v["z"] for v in lip.values())
    return float((audit.lipschitz_phi + T * l_fx) * lx * np.exp(T * (l_fy + 0.5 * l_fz ** 2)))


def regularity_audit(value_at: Callable, box: Sequence[float], n_pairs: int = 4000,
                     delta_list: Sequence[float] = (0.1, 0.05, 0.025, 0.0125), seed: int = 0,
                     n_components: int = 1, n_x: int = 121, n_t: int = 16,
                     predicted: float | None = None) -> RegularityReport:
    """Sample Lipschitz, Hölder and growth estimates of ``value_at(component, t, x)``.

    ``value_at`` must accept arrays. ``box`` is ``(t_lo, t_hi, x_lo, x_hi)``;
    time shifts ``t + delta`` stay inside it.
    """
    t_lo, t_hi, x_lo, x_hi = map(float, box)
    deltas = sorted((float(d) for d in delta_list), reverse=True)
    if not deltas or deltas[0] >= t_hi - t_lo or deltas[-1] <= 0:
        raise ConfigError("deltas must be positive and shorter than the time box")
    rng = _rng.substream(seed, _rng.REGULARITY)
    half = n_pairs // 2
    ts = rng.uniform(t_lo, t_hi, n_pairs)
    xa = rng.uniform(x_lo, x_hi, n_pairs)
    xb = rng.uniform(x_lo, x_hi, n_pairs)
    h = (x_hi - x_lo) * 10.0 ** rng.uniform(-3, -1, half)
    xb[:half] = np.clip(xa[:half] + h * rng.choice([-1.0, 1.0], half), x_lo, x_hi)
    xs = np.linspace(x_lo, x_hi, n_x)

    def call(i, t, x):
        try:
            out = np.asarray(value_at(i, t, x), dtype=float)
        except DomainError as exc:
            raise SolverError(f"value evaluation failed: {exc}") from exc
        if not np.all(np.isfinite(out)):
            raise SolverError("value function returned non-finite values")
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(t), np.shape(x)))

    lip, growth, scale = 0.0, 0.0, 0.0
    incr = np.zeros(len(deltas))
    for i in range(n_components):
        ua, ub = call(i, ts, xa), call(i, ts, xb)
        d = np.abs(xa - xb)
        ok = d > 0
        if np.any(ok):
            lip = max(lip, float(np.max(np.abs(ua - ub)[ok] / d[ok])))
        growth = max(growth, float(np.max(np.abs(ua) / (1.0 + np.abs(xa)))))
        scale = max(scale, float(np.max(np.abs(ua))))
        for q, delta in enumerate(deltas):
            base_t = np.linspace(t_lo, t_hi - delta, n_t)
            T_, X_ = np.meshgrid(base_t, xs, indexing="ij")
            du = np.abs(call(i, T_ + delta, X_) - call(i, T_, X_))
            incr[q] = max(incr[q], float(np.max(du)))

    flags = []
    floor = 1e-10 * (1.0 + scale)
    if np.all(incr <= floor):
        flags.append("time-constant")
        expo, const = None, None
    elif np.any(incr <= floor):
        flags.append("degenerate-fit")
        expo, const = None, None
    else:
        slope, icpt = np.polyfit(np.log(deltas), np.log(incr), 1)
        expo, const = float(slope), float(np.exp(icpt))
    # the allowance absorbs rounding in difference quotients of flat solutions
    if predicted is not None and lip > 1.5 * predicted + 1e-8 * (1.0 + scale):
        flags.append("lipschitz-above-prediction")
    samples = {"n_pairs": n_pairs, "seed": seed, "box": [t_lo, t_hi, x_lo, x_hi],
               "delta_list": deltas, "max_time_increment": incr.tolist(), "n_components": n_components}
    return RegularityReport(lip, expo, const, growth, flags, samples, predicted)
