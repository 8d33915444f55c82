"""Problem definition for the coupled forward-backward system and a sampling
audit of the standing assumptions on its coefficients.

The forward state is one-dimensional::

    dX_s = b(s, X_s) ds + sigma(s, X_s) dW_s

and the backward system has ``n`` components coupled through the full vector Y::

    dY^i_s = -f_i(s, X_s, Y_s, Z^i_s) ds + Z^i_s dW_s,   Y^i_T = Phi_i(X_T).
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import _rng
from .errors import ConfigError, DomainError, ExprError, ScopeError
from .expr import ExprAst, parse, to_source

logger = logging.getLogger(__name__)

COEFF_VARS = ("t", "x")
TERMINAL_VARS = ("x",)


def driver_vars(n: int) -> tuple[str, ...]:
    return ("t", "x", *(f"y{j + 1}" for j in range(n)), "z")


def _full(value, like):
    return np.array(np.broadcast_to(np.asarray(value, dtype=float), np.shape(like)))


def driver_env(t, x, ys, z) -> dict:
    env = {"t": t, "x": x, "z": z}
    for j, y in enumerate(ys):
        env[f"y{j + 1}"] = y
    return env


@dataclass(frozen=True)
class ProblemSpec:
    n: int
    T: float
    b: ExprAst
    sigma: ExprAst
    drivers: tuple
    terminals: tuple
    label: str = ""

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"component count must be an integer >= 1, got {self.n!r}")
        if not (np.isfinite(self.T) and self.T > 0):
            raise ConfigError(f"horizon T must be positive, got {self.T!r}")
        if len(self.drivers) != self.n or len(self.terminals) != self.n:
            raise ConfigError(
                f"expected {self.n} drivers and terminals, got {len(self.drivers)} and {len(self.terminals)}"
            )
        _check_scope("b", self.b, COEFF_VARS)
        _check_scope("sigma", self.sigma, COEFF_VARS)
        dv = driver_vars(self.n)
        for i, f in enumerate(self.drivers):
            _check_scope(f"f{i + 1}", f, dv)
        for i, phi in enumerate(self.terminals):
            _check_scope(f"Phi{i + 1}", phi, TERMINAL_VARS)

    # -- coefficient evaluation (vectorised over x) -------------------------
    def drift(self, t, x):
        return _full(self.b(t=t, x=x), x)

    def diffusion(self, t, x):
        return _full(self.sigma(t=t, x=x), x)

    def driver(self, i: int, t, x, ys: Sequence, z):
        return _full(self.drivers[i](**driver_env(t, x, ys, z)), x)

    def terminal(self, i: int, x):
        return _full(self.terminals[i](x=x), x)

    def with_horizon(self, T: float) -> "ProblemSpec":
        return replace(self, T=float(T))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "n": self.n,
            "T": self.T,
            "b": to_source(self.b),
            "sigma": to_source(self.sigma),
            "drivers": [to_source(f) for f in self.drivers],
            "terminals": [to_source(p) for p in self.terminals],
        }


def _check_scope(slot: str, ast: ExprAst, allowed) -> None:
    extra = ast.variables - set(allowed)
    if extra:
        raise ScopeError(f"{slot} may only reference {sorted(allowed)}, found {sorted(extra)}")


def _parse_slot(slot: str, text, allowed) -> ExprAst:
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = repr(float(text))
    if not isinstance(text, str):
        raise ConfigError(f"{slot}: expression must be a string, got {type(text).__name__}")
    try:
        return parse(text, allowed)
    except ExprError as exc:
        if "unknown identifier" in str(exc):
            raise ScopeError(f"{slot}: {exc} (allowed: {sorted(allowed)})") from exc
        raise ConfigError(f"{slot}: {exc}") from exc


def _component_list(doc: Mapping, list_key: str, prefix: str, n: int) -> list:
    if list_key in doc:
        items = doc[list_key]
        if not isinstance(items, list):
            raise ConfigError(f"{list_key} must be a list")
        return items
    keys = [f"{prefix}{i + 1}" for i in range(n)]
    missing = [k for k in keys if k not in doc]
    if missing:
        raise ConfigError(f"missing {', '.join(missing)} (or a {list_key!r} list)")
    return [doc[k] for k in keys]


def load_problem(document) -> ProblemSpec:
    """Build a :class:`ProblemSpec` from a mapping, a JSON string or a JSON file path.

    Drivers and terminals are given either as lists (``drivers``,
    ``terminals``) or as numbered keys (``f1``.., ``Phi1``..).
    """
    if isinstance(document, (str, os.PathLike)) and os.path.exists(document):
        with open(document) as fh:
            document = json.load(fh)
    elif isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"problem document is not valid JSON: {exc}") from exc
    if not isinstance(document, Mapping):
        raise ConfigError("problem document must be a mapping")
    try:
        n = document["n"]
        T = document["T"]
    except KeyError as exc:
        raise ConfigError(f"problem document lacks required key {exc.args[0]!r}") from None
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ConfigError(f"n must be an integer >= 1, got {n!r}")
    if isinstance(T, bool) or not isinstance(T, (int, float)) or not T > 0:
        raise ConfigError(f"T must be a positive number, got {T!r}")
    dv = driver_vars(n)
    drivers = _component_list(document, "drivers", "f", n)
    terminals = _component_list(document, "terminals", "Phi", n)
    if len(drivers) != n or len(terminals) != n:
        raise ConfigError(f"need exactly {n} drivers and {n} terminals")
    return ProblemSpec(
        n=n,
        T=float(T),
        b=_parse_slot("b", document.get("b", "0"), COEFF_VARS),
        sigma=_parse_slot("sigma", document.get("sigma", "0"), COEFF_VARS),
        drivers=tuple(_parse_slot(f"f{i + 1}", s, dv) for i, s in enumerate(drivers)),
        terminals=tuple(_parse_slot(f"Phi{i + 1}", s, TERMINAL_VARS) for i, s in enumerate(terminals)),
        label=str(document.get("label", "")),
    )


# ---------------------------------------------------------------------------
# Assumption audit
# ---------------------------------------------------------------------------

_CHUNK = 8192
_MAX_WITNESSES = 20


@dataclass
class Violation:
    kind: str  # "monotone" or "one_sided"
    driver: int
    argument: str
    point_a: dict
    point_b: dict
    value_a: float
    value_b: float
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "driver": f"f{self.driver + 1}",
            "argument": self.argument,
            "point_a": self.point_a,
            "point_b": self.point_b,
            "value_a": self.value_a,
            "value_b": self.value_b,
            **self.detail,
        }


@dataclass
class AssumptionReport:
    lipschitz_b: float
    lipschitz_sigma: float
    lipschitz_phi: float
    lipschitz_phi_per_component: list
    lipschitz_f_per_arg: dict  # {"f1": {"x": L, "y1": L, ..., "z": L}}
    monotone_ok: dict  # {"f1": {"y2": True}}
    one_sided_constants: tuple  # (C1, C2); C1 is None when n == 1
    one_sided_ok: bool
    sample_count: int
    seed: int
    box_radius: float
    violations: list

    @property
    def all_monotone(self) -> bool:
        return all(ok for per in self.monotone_ok.values() for ok in per.values())

    def driver_lipschitz(self, i: int) -> float:
        return max(self.lipschitz_f_per_arg[f"f{i + 1}"].values())

    def to_dict(self) -> dict:
        return {
            "lipschitz_b": self.lipschitz_b,
            "lipschitz_sigma": self.lipschitz_sigma,
            "lipschitz_phi": self.lipschitz_phi,
            "lipschitz_phi_per_component": self.lipschitz_phi_per_component,
            "lipschitz_f_per_arg": self.lipschitz_f_per_arg,
            "monotone_ok": self.monotone_ok,
            "one_sided_constants": list(self.one_sided_constants),
            "one_sided_ok": self.one_sided_ok,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "box_radius": self.box_radius,
            "violations": [v.to_dict() for v in self.violations],
        }


def _pairs(rng, size, radius):
    """Half global pairs over the box, half close pairs probing local slopes."""
    a = rng.uniform(-radius, radius, size)
    b = rng.uniform(-radius, radius, size)
    half = size // 2
    h = radius * 10.0 ** rng.uniform(-4, -2, half) * rng.choice([-1.0, 1.0], half)
    b[:half] = a[:half] + h
    return a, b


def _quotient(fa, fb, a, b):
    d = np.abs(a - b)
    ok = d > 0
    return float(np.max(np.abs(fa - fb)[ok] / d[ok])) if np.any(ok) else 0.0


def _eval(problem, label, fn, *args):
    try:
        return fn(*args)
    except DomainError as exc:
        raise DomainError(f"audit of {label}: {exc}", exc.point) from exc


def _point(names, arrays, k):
    return {name: float(arr[k]) if np.ndim(arr) else float(arr) for name, arr in zip(names, arrays)}


def _audit_chunk(problem, seed, chunk, size, radius, one_sided=None):
    """Sampled statistics of one chunk. ``one_sided`` = (C1, C2) switches to the mixed check."""
    rng = _rng.substream(seed, _rng.AUDIT, chunk)
    n, T = problem.n, problem.T
    names = driver_vars(n)
    out = {"lip": {}, "mono": {}, "c2": {}, "c1": {}, "viol": []}

    def base_point():
        t = rng.uniform(0.0, T, size)
        x = rng.uniform(-radius, radius, size)
        ys = [rng.uniform(-radius, radius, size) for _ in range(n)]
        z = rng.uniform(-radius, radius, size)
        return t, x, ys, z

    if one_sided is None:
        t = rng.uniform(0.0, T, size)
        x1, x2 = _pairs(rng, size, radius)
        out["lip"]["b"] = _quotient(_eval(problem, "b", problem.drift, t, x1),
                                    _eval(problem, "b", problem.drift, t, x2), x1, x2)
        out["lip"]["sigma"] = _quotient(_eval(problem, "sigma", problem.diffusion, t, x1),
                                        _eval(problem, "sigma", problem.diffusion, t, x2), x1, x2)
        for i in range(n):
            x1, x2 = _pairs(rng, size, radius)
            term = lambda x, i=i: problem.terminal(i, x)
            out["lip"][f"Phi{i + 1}"] = _quotient(_eval(problem, f"Phi{i + 1}", term, x1),
                                                  _eval(problem, f"Phi{i + 1}", term, x2), x1, x2)
        for i in range(n):
            fname = f"f{i + 1}"
            drv = lambda t, x, ys, z, i=i: problem.driver(i, t, x, ys, z)
            for arg in names[1:]:
                t, x, ys, z = base_point()
                args = {"x": x, "z": z, **{f"y{j + 1}": ys[j] for j in range(n)}}
                a1, a2 = _pairs(rng, size, radius)
                args1, args2 = dict(args), dict(args)
                args1[arg], args2[arg] = a1, a2
                f1 = _eval(problem, fname, drv, t, args1["x"], [args1[f"y{j + 1}"] for j in range(n)], args1["z"])
                f2 = _eval(problem, fname, drv, t, args2["x"], [args2[f"y{j + 1}"] for j in range(n)], args2["z"])
                out["lip"][(fname, arg)] = _quotient(f1, f2, a1, a2)
            # monotonicity in each off-diagonal y argument
            for j in range(n):
                if j == i:
                    continue
                t, x, ys, z = base_point()
                a1, a2 = _pairs(rng, size, radius)
                lo, hi = np.minimum(a1, a2), np.maximum(a1, a2)
                ys_lo = list(ys); ys_lo[j] = lo
                ys_hi = list(ys); ys_hi[j] = hi
                f_lo = _eval(problem, fname, drv, t, x, ys_lo, z)
                f_hi = _eval(problem, fname, drv, t, x, ys_hi, z)
                tol = 1e-12 * (np.abs(f_lo) + np.abs(f_hi))
                bad = np.flatnonzero((f_hi - f_lo < -tol) & (hi > lo))
                out["mono"][(fname, f"y{j + 1}")] = bad.size == 0
                for k in bad[:_MAX_WITNESSES]:
                    out["viol"].append(Violation(
                        "monotone", i, f"y{j + 1}",
                        _point(names, (t, x, *ys_hi, z), k), _point(names, (t, x, *ys_lo, z), k),
                        float(f_hi[k]), float(f_lo[k]),
                    ))
            # one-sided constants: own-argument and other-argument decreases
            if n > 1:
                t, x, ys, z = base_point()
                f0 = _eval(problem, fname, drv, t, x, ys, z)
                K = radius * 10.0 ** rng.uniform(-3, 0, size)
                ys_own = list(ys); ys_own[i] = ys[i] - K
                d_own = _eval(problem, fname, drv, t, x, ys_own, z) - f0
                out["c2"][fname] = float(np.max(d_own / K))
                c1 = np.inf
                for j in range(n):
                    if j == i:
                        continue
                    ys_oth = list(ys); ys_oth[j] = ys[j] - K
                    d_oth = _eval(problem, fname, drv, t, x, ys_oth, z) - f0
                    c1 = min(c1, float(np.min(-d_oth / K)))
                out["c1"][fname] = c1
        return out

    C1, C2 = one_sided
    for i in range(n):
        fname = f"f{i + 1}"
        drv = lambda t, x, ys, z, i=i: problem.driver(i, t, x, ys, z)
        for j in range(n):
            if j == i:
                continue
            t, x, ys, z = base_point()
            f0 = _eval(problem, fname, drv, t, x, ys, z)
            k_own = radius * 10.0 ** rng.uniform(-3, 0, size)
            k_oth = radius * 10.0 ** rng.uniform(-3, 0, size)
            ys2 = list(ys); ys2[i] = ys[i] - k_own; ys2[j] = ys[j] - k_oth
            f1 = _eval(problem, fname, drv, t, x, ys2, z)
            bound = C2 * k_own - C1 * k_oth
            tol = 1e-9 * (np.abs(f0) + np.abs(f1) + np.abs(bound) + 1.0)
            bad = np.flatnonzero(f1 - f0 > bound + tol)
            for k in bad[:_MAX_WITNESSES]:
                out["viol"].append(Violation(
                    "one_sided", i, f"y{j + 1}",
                    _point(names, (t, x, *ys2, z), k), _point(names, (t, x, *ys, z), k),
                    float(f1[k]), float(f0[k]),
                    {"own_decrease": float(k_own[k]), "other_decrease": float(k_oth[k]),
                     "C1": C1, "C2": C2},
                ))
    return out


def audit_assumptions(
    spec,
    sample_count: int = 100_000,
    box_radius: float = 5.0,
    seed: int = 0,
    workers: int = 1,
) -> AssumptionReport:
    """Estimate Lipschitz constants, monotonicity and one-sided constants by sampling.

    ``spec`` may be a :class:`ProblemSpec` or any object with the same
    coefficient methods (e.g. a mollified problem). Sampling is split into
    fixed chunks with their own random streams so the report does not depend
    on ``workers``.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")
    if not box_radius > 0:
        raise ValueError("box_radius must be positive")
    n = spec.n
    sizes = [min(_CHUNK, sample_count - c * _CHUNK) for c in range((sample_count + _CHUNK - 1) // _CHUNK)]
    chunks = list(enumerate(sizes))
    parts = _rng.map_blocks(lambda cs: _audit_chunk(spec, seed, cs[0], cs[1], box_radius), chunks, workers)

    lip: dict = {}
    mono: dict = {}
    c1s: dict = {}
    c2s: dict = {}
    violations = []
    for part in parts:
        for k, v in part["lip"].items():
            lip[k] = max(lip.get(k, 0.0), v)
        for k, v in part["mono"].items():
            mono[k] = mono.get(k, True) and v
        for k, v in part["c1"].items():
            c1s[k] = min(c1s.get(k, np.inf), v)
        for k, v in part["c2"].items():
            c2s[k] = max(c2s.get(k, -np.inf), v)
        violations.extend(part["viol"])

    if n > 1:
        C1 = float(min(c1s.values()))
        C2 = float(max(c2s.values()))
        # offsets keep mixed-check streams disjoint from the first pass
        mixed = _rng.map_blocks(
            lambda cs: _audit_chunk(spec, seed, cs[0] + len(chunks), cs[1], box_radius, (C1, C2)),
            chunks, workers,
        )
        for part in mixed:
            violations.extend(part["viol"])
        one_sided = (C1, C2)
        one_sided_ok = bool(C2 > C1 > 0) and not any(v.kind == "one_sided" for v in violations)
    else:
        one_sided = (None, None)
        one_sided_ok = True

    names = driver_vars(n)
    report = AssumptionReport(
        lipschitz_b=lip["b"],
        lipschitz_sigma=lip["sigma"],
        lipschitz_phi=max(lip[f"Phi{i + 1}"] for i in range(n)),
        lipschitz_phi_per_component=[lip[f"Phi{i + 1}"] for i in range(n)],
        lipschitz_f_per_arg={
            f"f{i + 1}": {arg: lip[(f"f{i + 1}", arg)] for arg in names[1:]} for i in range(n)
        },
        monotone_ok={
            f"f{i + 1}": {f"y{j + 1}": mono[(f"f{i + 1}", f"y{j + 1}")] for j in range(n) if j != i}
            for i in range(n)
        },
        one_sided_constants=one_sided,
        one_sided_ok=one_sided_ok,
        sample_count=sample_count,
        seed=seed,
        box_radius=box_radius,
        violations=violations,
    )
    if violations:
        logger.info("assumption audit recorded %d violation witness(es)", len(violations))
    return report
