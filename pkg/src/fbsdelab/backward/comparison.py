"""Runnable comparison certificate for two problems sharing their dynamics.

Both backward systems are solved on one ensemble. For component i the driver
gap is split into three telescoped pieces along the solved trajectories::

    f2_i(Y2, Z2_i) - f1_i(Y1, Z1_i) = fhat + cross + a * Yhat_i + b * Zhat_i

    fhat  = f2_i(Y1, Z1_i) - f1_i(Y1, Z1_i)            (>= 0 under the hypotheses)
    cross = f2_i(Y1 with others from Y2, Z1_i) - f2_i(Y1, Z1_i)
    a     = [f2_i(Y2, Z1_i) - f2_i(Y1 with others from Y2, Z1_i)] / Yhat_i
    b     = [f2_i(Y2, Z2_i) - f2_i(Y2, Z1_i)] / Zhat_i

with a, b set to zero where the denominator vanishes. The multiplier
``X_{k+1} = X_k (1 + a Delta + b dW)``, ``X_0 = 1`` makes ``Yhat_i X``
satisfy ``Yhat_i(0) = E[Yhat_i(T) X_T + sum (fhat + cross) X Delta]``, which
the certificate checks statistically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import _rng
from ..errors import DomainError
from ..problem import audit_assumptions, driver_vars
from .lsmc import DEFAULT_DEGREE, BackwardSolution, evaluate_drivers, solve_lsmc

logger = logging.getLogger(__name__)

MAX_RECORDED_VIOLATIONS = 1000
# Denominators this small relative to the operands are treated as zero; below
# it the quotient is rounding noise rather than a slope.
_ZERO_REL = 1e-12


@dataclass
class ComparisonCertificate:
    a_path: np.ndarray  # (n, M, N)
    b_path: np.ndarray  # (n, M, N)
    martingale: np.ndarray  # (n, M, N+1)
    ordering_violations: list  # (path, step, component, gap)
    violation_count: int
    representation_gap: dict
    mean_gap: np.ndarray  # (n, N+1): path mean of Y2 - Y1
    tolerance: np.ndarray  # (n,) combined solver tolerance used for the ordering check
    bound_ratio: list  # per component: max (|a| + |b|) / (2 L)
    bound_ok: bool
    hypotheses_ok: bool
    hypothesis_notes: list
    flags: list = field(default_factory=list)
    solutions: tuple = field(default=(), repr=False)

    @property
    def ordering_ok(self) -> bool:
        return self.violation_count == 0

    def to_dict(self) -> dict:
        return {
            "violation_count": self.violation_count,
            "ordering_violations": [list(v) for v in self.ordering_violations[:50]],
            "representation_gap": self.representation_gap,
            "initial_gap": self.mean_gap[:, 0].tolist(),
            "tolerance": self.tolerance.tolist(),
            "bound_ratio": self.bound_ratio,
            "bound_ok": self.bound_ok,
            "hypotheses_ok": self.hypotheses_ok,
            "hypothesis_notes": self.hypothesis_notes,
            "flags": self.flags,
            "martingale_start": float(self.martingale[:, :, 0].max()),
        }


def _dynamics_key(problem):
    if hasattr(problem, "base"):
        return ("mollified", problem.epsilon, _dynamics_key(problem.base))
    d = problem.to_dict()
    return (d["n"], float(d["T"]), d["b"], d["sigma"])


def _audit_ordering(spec1, spec2, samples: int, seed: int, radius: float) -> list:
    """Sample f1_i <= f2_i and Phi1_i <= Phi2_i on a box; return notes on failures."""
    rng = _rng.substream(seed, _rng.HYPOTHESIS)
    n = spec1.n
    notes = []
    names = driver_vars(n)
    pts = {v: rng.uniform(-radius, radius, samples) for v in names}
    pts["t"] = rng.uniform(0.0, spec1.T, samples)
    ys = [pts[f"y{j + 1}"] for j in range(n)]
    x = pts["x"]
    for i in range(n):
        try:
            d = spec2.driver(i, pts["t"], x, ys, pts["z"]) - spec1.driver(i, pts["t"], x, ys, pts["z"])
        except DomainError as exc:
            notes.append(f"f{i + 1}: evaluation failed during audit ({exc})")
            continue
        scale = 1e-12 * (1.0 + np.abs(d))
        if np.any(d < -scale):
            k = int(np.argmin(d))
            notes.append(f"f{i + 1}: spec1 exceeds spec2 by {-d[k]:.3e} at "
                         + ", ".join(f"{v}={pts[v][k]:.4g}" for v in names))
        dphi = spec2.terminal(i, x) - spec1.terminal(i, x)
        if np.any(dphi < -1e-12 * (1.0 + np.abs(dphi))):
            k = int(np.argmin(dphi))
            notes.append(f"Phi{i + 1}: spec1 exceeds spec2 by {-dphi[k]:.3e} at x={x[k]:.4g}")
    return notes


def _quotient(num, den, *operands):
    scale = sum(np.abs(o) for o in operands) + 1.0
    ok = np.abs(den) > _ZERO_REL * scale
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=ok)
    return out


def comparison_certificate(
    spec1,
    spec2,
    ensemble,
    basis_degree: int = DEFAULT_DEGREE,
    audit_samples: int = 20_000,
    audit_seed: int = 0,
    box_radius: float = 5.0,
    tolerance_factor: float = 3.0,
    solutions: tuple[BackwardSolution, BackwardSolution] | None = None,
) -> ComparisonCertificate:
    """Solve both problems on ``ensemble`` and certify the componentwise ordering."""
    if _dynamics_key(spec1) != _dynamics_key(spec2):
        raise ValueError("comparison requires identical n, T, b and sigma")
    n = spec1.n
    notes = _audit_ordering(spec1, spec2, audit_samples, audit_seed, box_radius)
    audits = [audit_assumptions(s, sample_count=audit_samples, box_radius=box_radius, seed=audit_seed)
              for s in (spec1, spec2)]
    for label, rep in zip(("spec1", "spec2"), audits):
        for fname, per in rep.monotone_ok.items():
            for arg, ok in per.items():
                if not ok:
                    notes.append(f"{label} {fname} is not non-decreasing in {arg}")
    hypotheses_ok = not notes
    flags = [] if hypotheses_ok else ["hypotheses-violated"]
    if not hypotheses_ok:
        logger.warning("comparison hypotheses failed: %s", "; ".join(notes))

    sol1, sol2 = solutions if solutions is not None else (
        solve_lsmc(spec1, ensemble, basis_degree), solve_lsmc(spec2, ensemble, basis_degree))
    Y1, Y2, Z1, Z2 = sol1.Y, sol2.Y, sol1.Z, sol2.Z
    M, N, dt = ensemble.n_paths, ensemble.steps, ensemble.dt
    nodes = ensemble.grid.nodes
    X, dW = ensemble.paths, ensemble.dW

    a = np.zeros((n, M, N))
    b = np.zeros((n, M, N))
    fhat = np.zeros((n, M, N))
    cross = np.zeros((n, M, N))
    for k in range(N):
        t, x = nodes[k], X[:, k]
        y1, y2 = Y1[:, :, k + 1], Y2[:, :, k + 1]
        f1_base = evaluate_drivers(spec1, t, x, y1, Z1[:, :, k], k)
        f2_base = evaluate_drivers(spec2, t, x, y1, Z1[:, :, k], k)
        f2_y2z1 = evaluate_drivers(spec2, t, x, y2, Z1[:, :, k], k)
        f2_y2z2 = evaluate_drivers(spec2, t, x, y2, Z2[:, :, k], k)
        for i in range(n):
            mixed = y2.copy()
            mixed[i] = y1[i]
            f2_mixed = spec2.driver(i, t, x, list(mixed), Z1[i, :, k])
            fhat[i, :, k] = f2_base[i] - f1_base[i]
            cross[i, :, k] = f2_mixed - f2_base[i]
            a[i, :, k] = _quotient(f2_y2z1[i] - f2_mixed, y2[i] - y1[i], y1[i], y2[i])
            b[i, :, k] = _quotient(f2_y2z2[i] - f2_y2z1[i], Z2[i, :, k] - Z1[i, :, k], Z1[i, :, k], Z2[i, :, k])

    mart = np.empty((n, M, N + 1))
    mart[:, :, 0] = 1.0
    for k in range(N):
        mart[:, :, k + 1] = mart[:, :, k] * (1.0 + a[:, :, k] * dt + b[:, :, k] * dW[:, k])

    yhat = Y2 - Y1
    rep = {}
    for i in range(n):
        weighted = np.sum((fhat[i] + cross[i]) * mart[i, :, :N], axis=1) * dt
        rhs = yhat[i, :, N] * mart[i, :, N] + weighted
        cross_term = np.sum(cross[i] * mart[i, :, :N], axis=1) * dt
        lhs = float(np.mean(yhat[i, :, 0]))
        se = float(np.std(rhs, ddof=1) / np.sqrt(M)) if M > 1 else 0.0
        se_cross = float(np.std(cross_term, ddof=1) / np.sqrt(M)) if M > 1 else 0.0
        rep[f"Y{i + 1}"] = {
            "initial_gap": lhs,
            "representation": float(np.mean(rhs)),
            "residual": lhs - float(np.mean(rhs)),
            "stderr": se,
            # left-hand side of the one-sided bound: must be >= 0 up to noise
            "bound_margin": lhs - float(np.mean(cross_term)),
            "bound_margin_stderr": se_cross,
            "min_multiplier": float(np.min(mart[i])),
        }

    tol = tolerance_factor * (sol1.tolerance + sol2.tolerance)
    excess = Y1 - Y2 - tol[:, None, None] - 1e-12 * (1.0 + np.abs(Y1) + np.abs(Y2))
    bad = np.argwhere(excess > 0)
    violations = [(int(m), int(k), int(i) + 1, float(-yhat[i, m, k])) for i, m, k in bad[:MAX_RECORDED_VIOLATIONS]]

    ratios = []
    for i in range(n):
        L = audits[1].driver_lipschitz(i)
        s = np.abs(a[i]) + np.abs(b[i])
        peak = float(np.max(s)) if s.size else 0.0
        ratios.append(0.0 if peak == 0 else (float("inf") if L == 0 else peak / (2.0 * L)))
    bound_ok = all(r <= 1.0 for r in ratios)
    if not bound_ok:
        flags.append("linearization-bound-exceeded")
    if bad.shape[0]:
        flags.append("ordering-violated")
        logger.warning("comparison found %d ordering violation(s)", bad.shape[0])

    return ComparisonCertificate(
        a_path=a, b_path=b, martingale=mart, ordering_violations=violations,
        violation_count=int(bad.shape[0]), representation_gap=rep,
        mean_gap=np.mean(yhat, axis=1), tolerance=tol, bound_ratio=ratios, bound_ok=bound_ok,
        hypotheses_ok=hypotheses_ok, hypothesis_notes=notes, flags=flags, solutions=(sol1, sol2),
    )
