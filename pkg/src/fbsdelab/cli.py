"""Scenario runner.

A scenario is a JSON document::

    {
      "name": "heat-quadratic",
      "description": "one line",
      "seed": 7,
      "problem": {"n": 1, "T": 1.0, "b": "0", "sigma": "sqrt(2)",
                  "drivers": ["0"], "terminals": ["x^2"]},
      "mollify": {"epsilon": 0.2},          # optional; tasks then use the smoothed problem
      "output_dir": "runs/heat-quadratic",  # optional
      "tasks": [{"task": "solve_fd", "name": "grid", "mesh": {...}, "expect": {...}}, ...]
    }

Each task reads its parameters from its own object; ``expect`` holds the pass
criteria. Every task gets a subseed derived from (seed, task index).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, _rng
from .backward import comparison_certificate, local_expansion_probe, solve_lsmc, solve_picard
from .errors import ConfigError, ExprError, FBSDEError, MeshDomainError, SolverError
from .expr import parse
from .forward import simulate
from .mollify import error_sweep, mollify, write_sweep_csv
from .pdegrid import (cross_validate, evaluate_many, grid_from_function, make_mesh, solve_fd,
                      write_binary)
from .problem import COEFF_VARS, audit_assumptions, driver_vars, load_problem
from .viscosity import check_viscosity, predicted_x_lipschitz, regularity_audit, write_worst_csv

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CRITERIA, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

TASKS = ("audit", "simulate", "solve_lsmc", "solve_picard", "solve_fd", "cross_validate", "compare",
         "mollify_sweep", "local_expansion", "check_viscosity", "regularity")
# artifact kind each task needs from an earlier task
REQUIRES = {"solve_lsmc": "ensemble", "cross_validate": "grid", "regularity": "grid"}
PRODUCES = {"simulate": "ensemble", "solve_lsmc": "lsmc", "solve_fd": "grid"}


# -- configuration ----------------------------------------------------------------

def scenario_dir():
    return resources.files("fbsdelab") / "scenarios"


def shipped_scenarios() -> dict:
    out = {}
    for entry in scenario_dir().iterdir():
        if entry.name.endswith(".json"):
            doc = json.loads(entry.read_text())
            out[doc["name"]] = doc
    return dict(sorted(out.items()))


def load_config(ref: str) -> dict:
    """Load a scenario from a file path, or by name from the shipped catalogue."""
    path = Path(ref)
    if path.is_file():
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    else:
        shipped = shipped_scenarios()
        if ref not in shipped:
            raise ConfigError(f"config file not found: {ref}")
        doc = shipped[ref]
    validate_config(doc)
    return doc


def validate_config(doc: dict) -> None:
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a JSON object")
    for key in ("name", "problem", "tasks"):
        if key not in doc:
            raise ConfigError(f"scenario is missing '{key}'")
    load_problem(doc["problem"])
    if "mollify" in doc:
        eps = doc["mollify"].get("epsilon")
        if not isinstance(eps, (int, float)) or not eps > 0:
            raise ConfigError("mollify.epsilon must be a positive number")
    have = set()
    for idx, task in enumerate(doc["tasks"]):
        kind = task.get("task")
        if kind not in TASKS:
            raise ConfigError(f"task {idx}: unknown task {kind!r}; expected one of {', '.join(TASKS)}")
        need = REQUIRES.get(kind)
        if kind == "check_viscosity" and "candidate" not in task:
            need = "grid"
        if kind == "solve_picard" and "horizon" not in task and "paths" not in task:
            need = "ensemble"
        if need and need not in have:
            raise ConfigError(f"task {idx} ({kind}) needs a '{need}' produced by an earlier task")
        if kind in PRODUCES:
            have.add(PRODUCES[kind])


# -- helpers ------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _exprs(sources, allowed=COEFF_VARS):
    if isinstance(sources, str):
        sources = [sources]
    try:
        return [parse(s, allowed) for s in sources]
    except ExprError as exc:
        raise ConfigError(f"bad expression in task: {exc}") from exc


def _write_xy(path: Path, header, xs, ys) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for a, b in zip(xs, ys):
            w.writerow([repr(float(a)), repr(float(b))])


def _probes(spec_probes):
    if isinstance(spec_probes, dict):
        return [(float(t), float(x)) for t in spec_probes["t"] for x in spec_probes["x"]]
    return [(float(t), float(x)) for t, x in spec_probes]


def _merge_problem(base: dict, overrides: dict | None) -> dict:
    doc = copy.deepcopy(base)
    for k, v in (overrides or {}).items():
        doc[k] = v
    return doc


class Criteria:
    def __init__(self):
        self.items = []

    def add(self, name, value, threshold, ok):
        self.items.append({"name": name, "value": value, "threshold": threshold, "pass": bool(ok)})

    @property
    def ok(self):
        return all(c["pass"] for c in self.items)


# -- runner -------------------------------------------------------------------------

class Runner:
    def __init__(self, config: dict, seed: int, workers: int, out_dir: Path, strict: bool):
        self.config = config
        self.seed = int(seed)
        self.workers = max(1, int(workers))
        self.out = out_dir
        self.strict = strict
        self.raw = load_problem(config["problem"])
        eps = config.get("mollify", {}).get("epsilon")
        self.problem = mollify(self.raw, eps) if eps else self.raw
        self.artifacts: dict = {}

    def problem_for(self, task, doc=None):
        raw = load_problem(doc) if doc is not None else self.raw
        if task.get("raw"):
            return raw
        eps = task.get("epsilon", self.config.get("mollify", {}).get("epsilon"))
        return mollify(raw, eps) if eps else raw

    def artifact(self, kind, task):
        name = task.get("use", kind)
        if name not in self.artifacts:
            raise ConfigError(f"no artifact named {name!r}")
        return self.artifacts[name]

    def store(self, kind, task, value):
        self.artifacts[kind] = value
        if "name" in task:
            self.artifacts[task["name"]] = value

    def file(self, idx, stem):
        name = f"{idx:02d}_{stem}"
        return self.out / name, name

    # each handler returns (metrics, criteria, files)
    def t_audit(self, idx, task, seed, crit):
        rep = audit_assumptions(self.problem_for(task), sample_count=int(task.get("samples", 20_000)),
                                box_radius=float(task.get("box_radius", 5.0)), seed=seed,
                                workers=self.workers)
        exp = task.get("expect", {})
        if "monotone" in exp:
            crit.add("monotone", rep.all_monotone, exp["monotone"], rep.all_monotone == exp["monotone"])
        if "one_sided_ok" in exp:
            crit.add("one_sided_ok", rep.one_sided_ok, exp["one_sided_ok"], rep.one_sided_ok == exp["one_sided_ok"])
        if self.strict:
            clean = rep.all_monotone and not rep.violations
            crit.add("strict: no audit warnings", len(rep.violations), 0, clean)
        d = rep.to_dict()
        d["violations"] = d["violations"][:20]
        self.artifacts["audit"] = rep
        return d, []

    def t_simulate(self, idx, task, seed, crit):
        spec = self.problem_for(task)
        ens = simulate(spec, float(task.get("t", 0.0)), float(task.get("x", 0.0)), int(task.get("steps", 64)),
                       int(task.get("paths", 20_000)), seed, workers=self.workers)
        self.store("ensemble", task, ens)
        metrics = {"paths": ens.n_paths, "steps": ens.steps, "seed": seed,
                   "terminal_mean": float(np.mean(ens.paths[:, -1])),
                   "terminal_std": float(np.std(ens.paths[:, -1]))}
        files = []
        path, name = self.file(idx, "terminal_histogram.csv")
        counts, edges = np.histogram(ens.paths[:, -1], bins=40)
        _write_xy(path, ["x", "count"], 0.5 * (edges[1:] + edges[:-1]), counts)
        files.append(name)
        return metrics, files

    def _check_exact(self, task, crit, label, grid_t, values_fn, ncomp):
        exp = task.get("expect", {})
        if "exact" not in exp:
            return {}
        exact = _exprs(exp["exact"])
        tol = float(exp.get("tol", 1e-2))
        relative = bool(exp.get("relative", False))
        errs = []
        for i in range(ncomp):
            got, want = values_fn(i, exact[min(i, len(exact) - 1)])
            err = np.abs(got - want)
            if relative:
                err = err / np.maximum(np.abs(want), 1e-300)
            errs.append(float(np.max(err)))
        crit.add(f"{label} vs closed form ({'relative' if relative else 'absolute'})", max(errs), tol,
                 max(errs) <= tol)
        return {"closed_form_error": errs}

    def t_solve_lsmc(self, idx, task, seed, crit):
        ens = self.artifact("ensemble", task)
        spec = self.problem_for(task)
        sol = solve_lsmc(spec, ens, int(task.get("basis_degree", 3)))
        self.store("lsmc", task, sol)
        metrics = sol.to_dict()
        nodes = ens.grid.nodes

        def at_start(i, ast):
            return sol.initial_value()[i], float(ast(t=nodes[0], x=ens.x0))

        metrics.update(self._check_exact(task, crit, "Y at start", nodes, at_start, sol.n))
        exp = task.get("expect", {})
        if "martingale_rms" in exp:
            err = sol.Y[0] - ens.paths
            rms = float(np.max(np.sqrt(np.mean(err ** 2, axis=0))))
            metrics["martingale_rms"] = rms
            metrics["martingale_sup"] = float(np.max(np.abs(err)))
            crit.add("sup over nodes of rms |Y - X|", rms, exp["martingale_rms"], rms <= exp["martingale_rms"])
        files = []
        for i in range(sol.n):
            path, name = self.file(idx, f"mean_Y{i + 1}.csv")
            _write_xy(path, ["t", f"mean_Y{i + 1}"], nodes, np.mean(sol.Y[i], axis=0))
            files.append(name)
        return metrics, files

    def t_solve_picard(self, idx, task, seed, crit):
        spec = self.problem_for(task)
        if "horizon" in task:
            spec = spec.with_horizon(float(task["horizon"]))
        if "paths" in task or "horizon" in task:
            ens = simulate(spec, float(task.get("t", 0.0)), float(task.get("x", 0.0)), int(task.get("steps", 64)),
                           int(task.get("paths", 20_000)), seed, workers=self.workers)
        else:
            ens = self.artifact("ensemble", task)
        degree = int(task.get("basis_degree", 3))
        sol = solve_picard(spec, ens, int(task.get("max_iter", 50)), float(task.get("tol", 1e-10)), degree)
        hist = np.array(sol.residual_history)
        metrics = sol.to_dict()
        exp = task.get("expect", {})
        pos = hist[hist > 0]
        ratios = pos[1:] / pos[:-1] if pos.size > 1 else np.array([])
        metrics["ratios"] = ratios.tolist()
        if pos.size > 2:
            j = np.arange(pos.size)
            coef = np.polyfit(j, np.log(pos), 1)
            pred = np.polyval(coef, j)
            ss = float(np.sum((np.log(pos) - np.log(pos).mean()) ** 2))
            r2 = 1.0 - float(np.sum((np.log(pos) - pred) ** 2)) / ss if ss > 0 else 1.0
            metrics["geometric_fit"] = {"rate": float(np.exp(coef[0])), "r2": r2}
        if "iterations" in exp:
            crit.add("picard iterations", sol.picard_iterations, exp["iterations"],
                     sol.picard_iterations == exp["iterations"])
        if exp.get("ratios_below_one"):
            worst = float(ratios.max()) if ratios.size else 0.0
            crit.add("max residual ratio", worst, 1.0, worst < 1.0)
        if "min_r2" in exp:
            r2 = metrics.get("geometric_fit", {}).get("r2", float("nan"))
            crit.add("geometric fit R^2", r2, exp["min_r2"], r2 >= exp["min_r2"])
        if "agree_lsmc" in exp:
            ref = solve_lsmc(spec, ens, degree)
            gap = float(np.max(np.abs(ref.initial_value() - sol.initial_value())))
            metrics["lsmc_agreement"] = gap
            crit.add("|picard - lsmc| at start", gap, exp["agree_lsmc"], gap <= exp["agree_lsmc"])
        if "exact" in exp:
            metrics.update(self._check_exact(task, crit, "picard Y at start", None,
                                              lambda i, ast: (sol.initial_value()[i],
                                                              float(ast(t=ens.grid.t0, x=ens.x0))), sol.n))
        path, name = self.file(idx, "picard_residuals.csv")
        _write_xy(path, ["iteration", "residual"], np.arange(1, hist.size + 1), hist)
        return metrics, [name]

    def _mesh(self, spec, m):
        return make_mesh(spec, float(m.get("x_lo", -8.0)), float(m.get("x_hi", 8.0)), int(m.get("nx", 200)),
                         m.get("nt"), m.get("scheme", "semi_implicit"))

    def t_solve_fd(self, idx, task, seed, crit):
        spec = self.problem_for(task)
        m = task.get("mesh", {})
        scheme = m.get("scheme", "semi_implicit")
        mesh = self._mesh(spec, m)
        grid = solve_fd(spec, mesh, scheme)
        self.store("grid", task, grid)
        metrics = grid.to_dict()
        exp = task.get("expect", {})
        if "exact" in exp:
            region = exp.get("region", [mesh.x_lo, mesh.x_hi])
            mask = (mesh.x >= region[0]) & (mesh.x <= region[1])
            T_, X_ = np.meshgrid(mesh.t, mesh.x[mask], indexing="ij")

            def on_mesh(i, ast):
                return grid.values[i][:, mask], np.broadcast_to(ast(t=T_, x=X_), T_.shape)

            metrics.update(self._check_exact(task, crit, "grid", None, on_mesh, grid.n))
        files = []
        path, name = self.file(idx, "grid.fbgd")
        write_binary(grid, path)
        files.append(name)
        for i in range(grid.n):
            path, name = self.file(idx, f"u{i + 1}_t0.csv")
            _write_xy(path, ["x", f"u{i + 1}"], mesh.x, grid.values[i, 0])
            files.append(name)
        return metrics, files

    def t_cross_validate(self, idx, task, seed, crit):
        grid = self.artifact("grid", task)
        spec = self.problem_for(task)
        probes = _probes(task["probes"])
        cv = cross_validate(spec, grid, probes, int(task.get("paths", 20_000)), int(task.get("steps", 64)),
                            seed, int(task.get("basis_degree", 3)), self.workers)
        metrics = cv.to_dict()
        exp = task.get("expect", {})
        if "tol" in exp:
            crit.add("max |MC - grid|", cv.max_discrepancy, exp["tol"], cv.max_discrepancy <= exp["tol"])
        if "min_probes" in exp:
            crit.add("probe count", len(probes), exp["min_probes"], len(probes) >= exp["min_probes"])
        if "exact" in exp:
            exact = _exprs(exp["exact"])
            worst = 0.0
            for r in cv.rows:
                want = float(exact[min(r["component"] - 1, len(exact) - 1)](t=r["t"], x=r["x"]))
                r["exact"] = want
                worst = max(worst, abs(r["mc"] - want))
            metrics["max_mc_vs_exact"] = worst
            crit.add("max |MC - closed form|", worst, exp["exact_tol"], worst <= exp["exact_tol"])
        path, name = self.file(idx, "cross_validation.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "component", "mc", "mc_stderr", "grid", "discrepancy"])
            for r in cv.rows:
                w.writerow([r["t"], r["x"], r["component"], repr(r["mc"]), repr(r["mc_stderr"]),
                            repr(r["grid"]), repr(r["discrepancy"])])
        return metrics, [name]

    def t_compare(self, idx, task, seed, crit):
        doc1 = _merge_problem(self.config["problem"], task.get("problem1"))
        doc2 = _merge_problem(doc1, task.get("problem2"))
        spec1, spec2 = self.problem_for(task, doc1), self.problem_for(task, doc2)
        ens = simulate(spec1, float(task.get("t", 0.0)), float(task.get("x", 0.0)), int(task.get("steps", 64)),
                       int(task.get("paths", 20_000)), seed, workers=self.workers)
        cert = comparison_certificate(spec1, spec2, ens, int(task.get("basis_degree", 3)),
                                      audit_samples=int(task.get("audit_samples", 20_000)), audit_seed=seed)
        metrics = cert.to_dict()
        exp = task.get("expect", {})
        if "violations" in exp:
            crit.add("ordering violations", cert.violation_count, exp["violations"],
                     cert.violation_count <= exp["violations"])
        if exp.get("bound_ok"):
            crit.add("max (|a|+|b|) / (2 L)", max(cert.bound_ratio), 1.0, cert.bound_ok)
        if exp.get("hypotheses_ok"):
            crit.add("comparison hypotheses", cert.hypotheses_ok, True, cert.hypotheses_ok)
        if "exact_gap" in exp:
            gaps = _exprs(exp["exact_gap"])
            nodes = ens.grid.nodes
            worst = 0.0
            for i, g in enumerate(gaps):
                want = np.broadcast_to(g(t=nodes, x=ens.x0), nodes.shape)
                worst = max(worst, float(np.max(np.abs(cert.mean_gap[i] - want))))
            metrics["gap_error"] = worst
            crit.add("mean gap vs closed form", worst, exp["gap_tol"], worst <= exp["gap_tol"])
        if "representation_sigmas" in exp:
            k = float(exp["representation_sigmas"])
            for comp, r in cert.representation_gap.items():
                allow = k * r["stderr"] + 1e-9 * (1 + abs(r["initial_gap"]))
                crit.add(f"representation residual {comp}", abs(r["residual"]), allow, abs(r["residual"]) <= allow)
        files = []
        for i in range(spec1.n):
            path, name = self.file(idx, f"gap_Y{i + 1}.csv")
            _write_xy(path, ["t", f"mean_gap_Y{i + 1}"], ens.grid.nodes, cert.mean_gap[i])
            files.append(name)
        return metrics, files

    def t_mollify_sweep(self, idx, task, seed, crit):
        eps = [float(e) for e in task["epsilons"]]
        exp = task.get("expect", {})
        if task.get("target", "coefficients") == "solution":
            return self._solution_sweep(idx, task, eps, crit)
        n = self.raw.n
        names = driver_vars(n)
        rng = _rng.substream(seed, _rng.AUDIT)
        count = int(task.get("probe_count", 400))
        lo, hi = task.get("box", [-3.0, 3.0])
        pts = {v: rng.uniform(lo, hi, count) for v in names}
        pts["t"] = rng.uniform(0.0, self.raw.T, count)
        grid_x = np.linspace(lo, hi, int(task.get("grid_points", 601)))
        # a regular x grid (through 0) catches the kinks of |x|-type coefficients
        pts = {v: np.concatenate([pts[v], grid_x if v == "x" else np.full(grid_x.size, 0.0)]) for v in names}
        probes = [{v: pts[v][k] for v in names} for k in range(pts["x"].size)]
        rows = error_sweep(self.raw, eps, probes, task.get("coefficients"))
        metrics = {"rows": rows}
        by = {}
        for r in rows:
            by.setdefault(r["coefficient"], []).append(r)
        files = []
        path, name = self.file(idx, "mollify_sweep.csv")
        write_sweep_csv(rows, path)
        files.append(name)
        for coef, rs in by.items():
            rs = sorted(rs, key=lambda r: -r["epsilon"])
            path, name = self.file(idx, f"sweep_{coef}.csv")
            _write_xy(path, ["epsilon", "sup_error"], [r["epsilon"] for r in rs], [r["sup_error"] for r in rs])
            files.append(name)
            errs = [r["sup_error"] for r in rs]
            ratios = [r["ratio"] for r in rs]
            if coef in exp.get("affine", []):
                crit.add(f"{coef}: affine sup error", max(errs), 1e-10, max(errs) <= 1e-10)
                continue
            if exp.get("decreasing"):
                ok = all(b < a for a, b in zip(errs, errs[1:]))
                crit.add(f"{coef}: sup error strictly decreasing in eps", errs, "decreasing", ok)
            band = exp.get("ratio_band", {}).get(coef)
            if band is not None:
                spread = max(ratios) / min(ratios) if min(ratios) > 0 else float("inf")
                crit.add(f"{coef}: max/min of sup_error/eps", spread, band, spread <= band)
            target = exp.get("ratio_target", {}).get(coef)
            if target is not None:
                value, rel = float(target[0]), float(target[1])
                dev = max(abs(r / value - 1.0) for r in ratios)
                crit.add(f"{coef}: sup_error/eps vs {value:.6f}", dev, rel, dev <= rel)
        return metrics, files

    def _solution_sweep(self, idx, task, eps, crit):
        m = task.get("mesh", {})
        raw_grid = solve_fd(self.raw, self._mesh(self.raw, m), m.get("scheme", "semi_implicit"))
        region = task.get("region")
        xs = raw_grid.mesh.x
        mask = np.ones(xs.shape, bool) if region is None else (xs >= region[0]) & (xs <= region[1])
        gaps = []
        for e in eps:
            g = solve_fd(mollify(self.raw, e), raw_grid.mesh, raw_grid.scheme)
            gaps.append(float(np.max(np.abs(g.values - raw_grid.values)[:, :, mask])))
        ratios = [g / e for g, e in zip(gaps, eps)]
        spread = max(ratios) / min(ratios) if min(ratios) > 0 else float("inf")
        exp = task.get("expect", {})
        if "ratio_spread" in exp:
            crit.add("max/min of sup gap / eps", spread, exp["ratio_spread"], spread <= exp["ratio_spread"])
        path, name = self.file(idx, "solution_gap.csv")
        _write_xy(path, ["epsilon", "sup_gap"], eps, gaps)
        return {"epsilons": eps, "sup_gaps": gaps, "ratios": ratios, "spread": spread}, [name]

    def t_local_expansion(self, idx, task, seed, crit):
        spec = self.problem_for(task)
        probe = local_expansion_probe(spec, task["gamma"], float(task.get("t", 0.0)), float(task.get("x", 0.0)),
                                      task["deltas"], int(task.get("steps", 64)), int(task.get("paths", 20_000)),
                                      seed, int(task.get("basis_degree", 3)), int(task.get("substeps", 1000)),
                                      self.workers)
        exp = task.get("expect", {})
        if "min_rate" in exp:
            rate = probe.rate if probe.rate is not None else float("nan")
            crit.add("fitted rate exponent", rate, exp["min_rate"], probe.rate is not None and rate >= exp["min_rate"])
        if "identity_tol" in exp:
            crit.add("shift identity (relative)", probe.max_identity_residual, exp["identity_tol"],
                     probe.max_identity_residual <= exp["identity_tol"])
        path, name = self.file(idx, "expansion_gap.csv")
        _write_xy(path, ["delta", "gap"], probe.delta_list, np.max(probe.gaps, axis=1))
        return probe.to_dict(), [name]

    def t_check_viscosity(self, idx, task, seed, crit):
        spec = self.problem_for(task)
        if "candidate" in task:
            fns = _exprs(task["candidate"])
            if "mesh" in task:
                mesh = self._mesh(spec, task["mesh"])
            else:
                mesh = self.artifact("grid", task).mesh
            cand = grid_from_function([lambda t, x, f=f: f(t=t, x=x) for f in fns], mesh)
        else:
            cand = self.artifact("grid", task)
        scale = float(np.max(np.abs(cand.values)))
        tol = float(task["tolerance"]) if "tolerance" in task else float(task.get("rel_tolerance", 1e-3)) * (1 + scale)
        rep = check_viscosity(cand, spec, task.get("curvatures", [1e-3, 1e-2, 1e-1]), tol,
                              int(task.get("band", 2)), task.get("time_jet", "forward"))
        exp = task.get("expect", {})
        for key, field_ in (("sub_ok", rep.sub_ok), ("super_ok", rep.super_ok)):
            if key in exp:
                crit.add(key, field_, exp[key], all(field_) == exp[key])
        for key, loc in (("worst_sub", rep.worst_sub_residual), ("worst_super", rep.worst_super_residual)):
            if key in exp:
                value, rel = exp[key]
                dev = abs(loc["value"] / value - 1.0)
                crit.add(f"{key} residual vs {value}", loc["value"], f"{value} +/- {rel:.0%}", dev <= rel)
        path, name = self.file(idx, "viscosity_worst.csv")
        write_worst_csv(rep, path)
        return rep.to_dict(), [name]

    def t_regularity(self, idx, task, seed, crit):
        grid = self.artifact("grid", task)
        m = grid.mesh
        box = task.get("box", [m.t0, m.T, max(m.x_lo, -3.0), min(m.x_hi, 3.0)])
        audit = self.artifacts.get("audit")
        predicted = predicted_x_lipschitz(audit, m.T - m.t0) if audit is not None else None
        rep = regularity_audit(lambda i, t, x: evaluate_many(grid, t, x, i), box, int(task.get("n_pairs", 4000)),
                               task.get("deltas", [0.1, 0.05, 0.025, 0.0125]), seed, grid.n, predicted=predicted)
        exp = task.get("expect", {})
        if "time_constant" in exp:
            crit.add("time-constant flag", rep.time_constant, exp["time_constant"], rep.time_constant == exp["time_constant"])
        if "min_exponent" in exp:
            if rep.time_constant:
                crit.add("t-Hoelder exponent (flagged time-constant, not fitted)", None, exp["min_exponent"], True)
            else:
                e = rep.t_holder_exponent_fit
                crit.add("t-Hoelder exponent fit", e, exp["min_exponent"], e is not None and e >= exp["min_exponent"])
        finite = np.isfinite(rep.x_lipschitz_estimate) and np.isfinite(rep.linear_growth_ratio)
        crit.add("finite Lipschitz and growth estimates", [rep.x_lipschitz_estimate, rep.linear_growth_ratio],
                 "finite", finite)
        if predicted is not None and exp.get("within_prediction"):
            crit.add("x-Lipschitz <= 1.5 x predicted", rep.x_lipschitz_estimate, 1.5 * predicted,
                     rep.x_lipschitz_estimate <= 1.5 * predicted)
        path, name = self.file(idx, "time_increments.csv")
        _write_xy(path, ["delta", "max_increment"], rep.samples["delta_list"], rep.samples["max_time_increment"])
        return rep.to_dict(), [name]

    def run(self):
        self.out.mkdir(parents=True, exist_ok=True)
        results, timings, manifest = [], [], []
        status = "pass"
        exit_code = EXIT_OK
        start = time.perf_counter()
        for idx, task in enumerate(self.config["tasks"]):
            kind = task["task"]
            seed = _rng.derive_seed(self.seed, idx)
            crit = Criteria()
            t0 = time.perf_counter()
            entry = {"index": idx, "task": kind, "label": task.get("label", kind)}
            try:
                metrics, files = getattr(self, f"t_{kind}")(idx, task, seed, crit)
            except (SolverError, MeshDomainError) as exc:
                logger.error("task %d (%s) failed: %s", idx, kind, exc)
                entry.update(status="error", error=str(exc), criteria=crit.items)
                results.append(entry)
                timings.append(time.perf_counter() - t0)
                status, exit_code = "error", EXIT_SOLVER
                break
            entry.update(status="pass" if crit.ok else "fail", criteria=crit.items, metrics=metrics, files=files)
            manifest.extend(files)
            results.append(entry)
            timings.append(time.perf_counter() - t0)
            for c in crit.items:
                logger.info("[%s] %s: %s (threshold %s)", "PASS" if c["pass"] else "FAIL", c["name"],
                            c["value"], c["threshold"])
            if not crit.ok and status == "pass":
                status, exit_code = "fail", EXIT_CRITERIA
        report = {
            "tool": "fbsdelab",
            "version": __version__,
            "scenario": self.config["name"],
            "seed": self.seed,
            "problem": self.config["problem"],
            "mollify": self.config.get("mollify"),
            "status": status,
            "tasks": results,
            "manifest": sorted(manifest),
            # excluded from the reproducible payload
            "runtime": {"threads": self.workers, "total_seconds": time.perf_counter() - start,
                        "task_seconds": timings},
        }
        with open(self.out / "report.json", "w") as fh:
            json.dump(_clean(report), fh, indent=2, sort_keys=True)
        return exit_code, report


def numeric_payload(report: dict) -> dict:
    """Report without the runtime block; the part that must reproduce bit for bit."""
    return {k: v for k, v in report.items() if k != "runtime"}


def run_scenario(ref: str, seed=None, threads: int = 1, out_dir=None, strict: bool = False):
    config = load_config(ref)
    seed = config.get("seed", 0) if seed is None else seed
    out = Path(out_dir) if out_dir else Path(config.get("output_dir", os.path.join("runs", config["name"])))
    return Runner(config, seed, threads, out, strict).run()


# -- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbsdelab", description="Run coupled FBSDE / PDE scenarios.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario file or a shipped scenario by name")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--threads", type=int, default=1, help="worker cap (results do not depend on it)")
    p_run.add_argument("--out-dir", default=None, help="directory for report.json and CSV files")
    p_run.add_argument("--strict", action="store_true", help="treat assumption-audit warnings as failures")
    sub.add_parser("list-scenarios", help="list shipped scenarios")
    p_desc = sub.add_parser("describe", help="print a shipped scenario")
    p_desc.add_argument("scenario")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list-scenarios":
            for name, doc in shipped_scenarios().items():
                print(f"{name:22s} {doc.get('description', '')}")
            return EXIT_OK
        if args.command == "describe":
            print(json.dumps(load_config(args.scenario), indent=2))
            return EXIT_OK
        code, report = run_scenario(args.config, args.seed, args.threads, args.out_dir, args.strict)
        for t in report["tasks"]:
            print(f"{t['index']:2d} {t['task']:16s} {t['status']}")
        print(f"status: {report['status']}")
        return code
    except (ConfigError, ExprError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FBSDEError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
