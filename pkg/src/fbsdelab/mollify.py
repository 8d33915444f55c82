"""Gaussian mollification of problem coefficients.

Every coefficient g is replaced by ``g_eps(p) = E[g(p + eps * S)]`` with S a
vector of independent standard normals over the smoothed arguments. ``b``,
``sigma`` and the terminals are smoothed in x; drivers are smoothed jointly in
(x, y1..yn, z). Time is never smoothed.

Integrals use a 64-node rule per smoothed axis: two 32-point Gauss-Legendre
panels on [-8, 0] and [0, 8] weighted by the standard normal density and
renormalised to unit mass. Splitting at the origin makes the rule exact for a
kink sitting at the evaluation point (e.g. ``abs(x)`` at x = 0).

Before integrating, each expression is split into additive terms and each
term into factors over disjoint variable sets. With a product kernel the
expectation of such a product is the product of expectations, and factors that
are affine in their smoothed variables are left untouched (Gaussian smoothing
fixes affine maps). The decomposition is exact; it only saves work.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from functools import reduce
from typing import Mapping, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigError, DomainError
from .expr import BinOp, ExprAst, Neg, Num, Var, free_variables
from .problem import driver_env, driver_vars

NODES_PER_AXIS = 64
TRUNCATION = 8.0
MAX_JOINT_AXES = 3
_MAX_BLOCK = 2_000_000  # points x quadrature nodes evaluated at once


def gaussian_rule(n_nodes: int = NODES_PER_AXIS, truncation: float = TRUNCATION):
    """Nodes and normalised weights for integrating against N(0, 1) on [-L, L]."""
    if n_nodes % 2:
        raise ValueError("node count must be even (two panels)")
    s, w = leggauss(n_nodes // 2)
    half = truncation / 2.0
    nodes = np.concatenate([(s - 1.0) * half, (s + 1.0) * half])
    weights = np.concatenate([w, w]) * half
    weights *= np.exp(-0.5 * nodes**2) / np.sqrt(2.0 * np.pi)
    return nodes, weights / weights.sum()


QUAD_NODES, QUAD_WEIGHTS = gaussian_rule()


# -- expression decomposition -------------------------------------------------

def _additive_terms(node, sign=1.0):
    if isinstance(node, BinOp) and node.op in "+-":
        right_sign = sign if node.op == "+" else -sign
        return _additive_terms(node.left, sign) + _additive_terms(node.right, right_sign)
    if isinstance(node, Neg):
        return _additive_terms(node.operand, -sign)
    return [(sign, node)]


def _factors(node, smoothed):
    if isinstance(node, BinOp) and node.op == "*":
        return _factors(node.left, smoothed) + _factors(node.right, smoothed)
    if isinstance(node, BinOp) and node.op == "/" and not (free_variables(node.right) & smoothed):
        return _factors(node.left, smoothed) + [BinOp("/", Num(1.0), node.right)]
    if isinstance(node, Neg):
        return [Num(-1.0)] + _factors(node.operand, smoothed)
    return [node]


def _is_affine(node, smoothed) -> bool:
    if not (free_variables(node) & smoothed):
        return True
    if isinstance(node, Var):
        return True
    if isinstance(node, Neg):
        return _is_affine(node.operand, smoothed)
    if isinstance(node, BinOp):
        lc = not (free_variables(node.left) & smoothed)
        rc = not (free_variables(node.right) & smoothed)
        if node.op in "+-":
            return _is_affine(node.left, smoothed) and _is_affine(node.right, smoothed)
        if node.op == "*":
            return (lc and _is_affine(node.right, smoothed)) or (rc and _is_affine(node.left, smoothed))
        if node.op == "/":
            return rc and _is_affine(node.left, smoothed)
    return False


@dataclass(frozen=True)
class _Group:
    ast: ExprAst
    axes: tuple  # smoothed variables this factor depends on
    identity: bool


class SmoothedCoefficient:
    """Evaluator of the Gaussian smoothing of one expression."""

    def __init__(self, ast: ExprAst, smoothed: Sequence[str], epsilon: float,
                 max_joint_axes: int = MAX_JOINT_AXES):
        self.ast = ast
        self.epsilon = float(epsilon)
        sm = frozenset(smoothed)
        self.terms = []
        for sign, node in _additive_terms(ast.root):
            factors = _factors(node, sm)
            groups: list[tuple[set, list]] = []
            plain = []
            for fac in factors:
                fv = free_variables(fac) & sm
                if not fv:
                    plain.append(fac)
                    continue
                merged_vars, merged = set(fv), [fac]
                rest = []
                for gv, gf in groups:
                    if gv & merged_vars:
                        merged_vars |= gv
                        merged = gf + merged
                    else:
                        rest.append((gv, gf))
                groups = rest + [(merged_vars, merged)]
            built = []
            if plain:
                built.append(_Group(ExprAst(_product(plain)), (), True))
            for gv, gf in groups:
                if len(gv) > max_joint_axes:
                    raise ConfigError(
                        f"joint smoothing over {sorted(gv)} exceeds the cap of {max_joint_axes} axes"
                    )
                root = _product(gf)
                built.append(_Group(ExprAst(root), tuple(sorted(gv)), _is_affine(root, sm)))
            self.terms.append((sign, built))

    def __call__(self, env: Mapping, shape) -> np.ndarray:
        total = np.zeros(shape)
        for sign, groups in self.terms:
            value = np.full(shape, sign)
            for g in groups:
                value = value * self._group(g, env, shape)
            total = total + value
        return total

    def _group(self, g: _Group, env, shape):
        if g.identity:
            return np.broadcast_to(np.asarray(g.ast._fn(env), dtype=float), shape)
        return _smooth(g.ast, g.axes, env, shape, self.epsilon)

    def derivative_x(self, env: Mapping, shape, order: int) -> np.ndarray:
        """d^order/dx^order of the smoothed value, by differentiating the kernel in x."""
        return _smooth(self.ast, ("x",), env, shape, self.epsilon, order=order)


def _product(factors):
    return reduce(lambda a, b: BinOp("*", a, b), factors)


def _smooth(ast: ExprAst, axes, env, shape, eps, order=0):
    k = len(axes)
    nodes = np.array(list(itertools.product(QUAD_NODES, repeat=k))).T  # (k, K)
    weights = np.prod(np.array(list(itertools.product(QUAD_WEIGHTS, repeat=k))), axis=1)
    if order:
        s = nodes[axes.index("x")]
        kernel = s if order == 1 else s**2 - 1.0
        if order > 2:
            raise ValueError("only first and second derivatives are supported")
        weights = weights * kernel / eps**order
    n_points = int(np.prod(shape)) if shape else 1
    flat = {}
    for name, v in env.items():
        arr = np.asarray(v, dtype=float)
        flat[name] = np.broadcast_to(arr, shape).reshape(n_points) if arr.ndim else arr
    out = np.empty(n_points)
    block = max(1, _MAX_BLOCK // nodes.shape[1])
    for lo in range(0, n_points, block):
        hi = min(n_points, lo + block)
        sub = {}
        for name, v in flat.items():
            sub[name] = v[lo:hi, None] if np.ndim(v) else v
        for a, name in enumerate(axes):
            sub[name] = sub[name] + eps * nodes[a][None, :]
        with np.errstate(all="ignore"):
            vals = np.broadcast_to(ast._fn(sub), (hi - lo, nodes.shape[1]))
        if not np.all(np.isfinite(vals)):
            row = int(np.argmax(~np.all(np.isfinite(vals), axis=1)))
            point = {nm: float(v[lo + row]) if np.ndim(v) else float(v) for nm, v in flat.items()}
            raise DomainError("mollifier quadrature hit a non-finite value", point)
        out[lo:hi] = vals @ weights
    return out.reshape(shape)


# -- mollified problem ----------------------------------------------------------

class MollifiedProblem:
    """Problem whose coefficients are the Gaussian smoothings of ``base``.

    Exposes the same evaluation methods as :class:`~fbsdelab.problem.ProblemSpec`,
    so every solver accepts either.
    """

    def __init__(self, base, epsilon: float, max_joint_axes: int = MAX_JOINT_AXES):
        if not (np.isfinite(epsilon) and epsilon > 0):
            raise ConfigError(f"mollification width must be positive, got {epsilon!r}")
        self.base = base
        self.epsilon = float(epsilon)
        self.quadrature = (QUAD_NODES, QUAD_WEIGHTS)
        smoothed_drv = [v for v in driver_vars(base.n) if v != "t"]
        self.b_eps = SmoothedCoefficient(base.b, ["x"], epsilon, max_joint_axes)
        self.sigma_eps = SmoothedCoefficient(base.sigma, ["x"], epsilon, max_joint_axes)
        self.terminals_eps = [SmoothedCoefficient(p, ["x"], epsilon, max_joint_axes) for p in base.terminals]
        self.drivers_eps = [SmoothedCoefficient(f, smoothed_drv, epsilon, max_joint_axes) for f in base.drivers]

    @property
    def n(self):
        return self.base.n

    @property
    def T(self):
        return self.base.T

    @property
    def label(self):
        return f"{self.base.label} [mollified eps={self.epsilon:g}]"

    def with_horizon(self, T):
        return MollifiedProblem(self.base.with_horizon(T), self.epsilon)

    def drift(self, t, x):
        return self.b_eps({"t": t, "x": x}, np.shape(x))

    def diffusion(self, t, x):
        return self.sigma_eps({"t": t, "x": x}, np.shape(x))

    def terminal(self, i, x):
        return self.terminals_eps[i]({"x": x}, np.shape(x))

    def driver(self, i, t, x, ys, z):
        shape = np.broadcast_shapes(np.shape(x), np.shape(z), *(np.shape(y) for y in ys))
        return self.drivers_eps[i](driver_env(t, x, ys, z), shape)

    def derivative(self, which: str, t, x, order: int = 1):
        """Analytic x-derivative of a smoothed ``b``, ``sigma`` or ``PhiK``."""
        coeff = self._select(which)
        if coeff in self.drivers_eps:
            raise ValueError("derivatives are provided for b, sigma and terminals only")
        return coeff.derivative_x({"t": t, "x": x}, np.shape(x), order)

    def _select(self, which: str) -> SmoothedCoefficient:
        if which == "b":
            return self.b_eps
        if which == "sigma":
            return self.sigma_eps
        if which.startswith("Phi"):
            return self.terminals_eps[int(which[3:]) - 1]
        if which.startswith("f"):
            return self.drivers_eps[int(which[1:]) - 1]
        raise ValueError(f"unknown coefficient {which!r}")

    def to_dict(self):
        return {"base": self.base.to_dict(), "epsilon": self.epsilon}


def mollify(problem, epsilon: float) -> MollifiedProblem:
    return MollifiedProblem(problem, epsilon)


def coefficient_names(n: int) -> list[str]:
    return ["b", "sigma", *(f"Phi{i + 1}" for i in range(n)), *(f"f{i + 1}" for i in range(n))]


def _arg_names(which: str, n: int):
    if which in ("b", "sigma"):
        return ("t", "x")
    if which.startswith("Phi"):
        return ("x",)
    return driver_vars(n)


def _point_env(which, n, point):
    names = _arg_names(which, n)
    if isinstance(point, Mapping):
        return {k: point[k] for k in names}
    point = list(point)
    if len(point) != len(names):
        raise ValueError(f"{which} expects {len(names)} arguments {names}, got {len(point)}")
    return dict(zip(names, point))


def _evaluate(problem, which, env):
    n = problem.n
    if which == "b":
        return problem.drift(env["t"], env["x"])
    if which == "sigma":
        return problem.diffusion(env["t"], env["x"])
    if which.startswith("Phi"):
        return problem.terminal(int(which[3:]) - 1, env["x"])
    i = int(which[1:]) - 1
    return problem.driver(i, env["t"], env["x"], [env[f"y{j + 1}"] for j in range(n)], env["z"])


def mollify_eval(problem: MollifiedProblem, which: str, point) -> float:
    """Value of the smoothed coefficient ``which`` at ``point``.

    ``point`` is a mapping or a sequence ordered as the coefficient's
    arguments: ``(t, x)`` for b and sigma, ``(x,)`` for PhiK and
    ``(t, x, y1..yn, z)`` for fK.
    """
    env = _point_env(which, problem.n, point)
    env = {k: np.asarray([float(v)]) for k, v in env.items()}
    return float(_evaluate(problem, which, env)[0])


def error_sweep(spec, epsilons: Sequence[float], probe_points, coefficients=None) -> list[dict]:
    """Sup over probe points of |g_eps - g| for every coefficient and width.

    Probe points are full argument vectors ``(t, x, y1..yn, z)`` (or mappings);
    each coefficient reads the arguments it needs. Rows carry the ratio
    sup_error / eps, which stays bounded for Lipschitz coefficients.
    """
    eps = [float(e) for e in epsilons]
    if not eps or any(e <= 0 for e in eps) or len(set(eps)) != len(eps):
        raise ValueError("epsilons must be positive and distinct")
    probe_points = list(probe_points)
    if not probe_points:
        raise ValueError("probe_points must be nonempty")
    names = driver_vars(spec.n)
    cols = {name: [] for name in names}
    for p in probe_points:
        env = p if isinstance(p, Mapping) else dict(zip(names, p))
        for name in names:
            cols[name].append(float(env[name]))
    full = {k: np.asarray(v) for k, v in cols.items()}
    coefficients = coefficients or coefficient_names(spec.n)
    raw = {c: _evaluate(spec, c, full) for c in coefficients}
    rows = []
    for e in eps:
        smooth = MollifiedProblem(spec, e)
        for c in coefficients:
            err = np.abs(_evaluate(smooth, c, full) - raw[c])
            k = int(np.argmax(err))
            rows.append({
                "coefficient": c,
                "epsilon": e,
                "sup_error": float(err[k]),
                "ratio": float(err[k] / e),
                "argmax": {name: float(full[name][k]) for name in _arg_names(c, spec.n)},
            })
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["coefficient", "epsilon", "sup_error", "ratio"])
        for r in rows:
            w.writerow([r["coefficient"], repr(r["epsilon"]), repr(r["sup_error"]), repr(r["ratio"])])
