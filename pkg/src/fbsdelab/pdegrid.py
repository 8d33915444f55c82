"""Finite-difference solver for the coupled semi-linear parabolic system

    du_i/dt + 0.5 sigma^2 d2u_i/dx2 + b du_i/dx + f_i(t, x, u, sigma du_i/dx) = 0,
    u_i(T, x) = Phi_i(x),

on a truncated interval, marching backward from T. The reaction term is
explicit (Heun predictor-corrector); the operator is either explicit or
backward Euler (``semi_implicit``, one tridiagonal solve per component).

Nodes are ``x_j = x_lo + j dx`` for ``j = 0 .. nx + 1`` with
``dx = (x_hi - x_lo) / (nx + 1)``. Columns 0 and nx + 1 are ghost columns
filled by linear extrapolation, which amounts to ``d2u/dx2 = 0`` at the
boundary-adjacent nodes and matches the linear growth of the value functions.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from . import _rng
from .backward.lsmc import solve_lsmc
from .errors import DomainError, MeshDomainError, SolverError, StabilityError
from .forward import simulate

logger = logging.getLogger(__name__)

SCHEMES = ("explicit", "semi_implicit")
BOUNDARY = "linear_extrapolation"
MAGIC = b"FBGD"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SpaceTimeMesh:
    x_lo: float
    x_hi: float
    nx: int
    nt: int
    T: float
    t0: float = 0.0

    def __post_init__(self):
        if not self.x_lo < self.x_hi:
            raise ValueError(f"need x_lo < x_hi, got [{self.x_lo}, {self.x_hi}]")
        if self.nx < 3:
            raise ValueError(f"need at least 3 interior nodes, got {self.nx}")
        if self.nt < 1:
            raise ValueError(f"need at least one time step, got {self.nt}")
        if not self.T > self.t0:
            raise ValueError("need t0 < T")

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.nx + 1)

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.nt

    @property
    def x(self) -> np.ndarray:
        out = self.x_lo + self.dx * np.arange(self.nx + 2)
        out[-1] = self.x_hi
        return out

    @property
    def t(self) -> np.ndarray:
        out = self.t0 + self.dt * np.arange(self.nt + 1)
        out[-1] = self.T
        return out

    def to_dict(self) -> dict:
        return {"x_lo": self.x_lo, "x_hi": self.x_hi, "nx": self.nx, "nt": self.nt,
                "T": self.T, "t0": self.t0, "dx": self.dx, "dt": self.dt}


def _coefficient_bounds(spec, mesh: SpaceTimeMesh):
    xs = mesh.x
    s2, bmax = 0.0, 0.0
    for t in mesh.t:
        s2 = max(s2, float(np.max(spec.diffusion(t, xs) ** 2)))
        bmax = max(bmax, float(np.max(np.abs(spec.drift(t, xs)))))
    return s2, bmax


def stable_dt(spec, mesh: SpaceTimeMesh) -> float:
    """Largest explicit time step allowed by ``dt <= dx^2 / (sup sigma^2 + dx sup|b|)``."""
    s2, bmax = _coefficient_bounds(spec, mesh)
    denom = s2 + mesh.dx * bmax
    return np.inf if denom == 0 else mesh.dx ** 2 / denom


def make_mesh(spec, x_lo: float, x_hi: float, nx: int, nt: int | None = None,
              scheme: str = "semi_implicit", safety: float = 0.9, t0: float = 0.0) -> SpaceTimeMesh:
    """Mesh on [t0, spec.T] x [x_lo, x_hi]; ``nt`` defaults to the stability bound (explicit)
    or to one step per ``dx`` (semi-implicit)."""
    if nt is None:
        probe = SpaceTimeMesh(x_lo, x_hi, nx, 1, spec.T, t0)
        if scheme == "explicit":
            dt = safety * stable_dt(spec, probe)
            nt = max(1, int(np.ceil((spec.T - t0) / dt))) if np.isfinite(dt) else 1
        else:
            nt = max(1, int(np.ceil((spec.T - t0) / probe.dx)))
    return SpaceTimeMesh(float(x_lo), float(x_hi), int(nx), int(nt), float(spec.T), float(t0))


@dataclass(frozen=True)
class GridSolution:
    mesh: SpaceTimeMesh
    values: np.ndarray  # (n, nt+1, nx+2) including ghost columns
    scheme: str
    boundary: str = BOUNDARY

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def interior(self, component: int) -> np.ndarray:
        return self.values[component, :, 1:-1]

    def to_dict(self) -> dict:
        return {"mesh": self.mesh.to_dict(), "scheme": self.scheme, "boundary": self.boundary,
                "n": self.n}


def _extrapolate(u: np.ndarray) -> None:
    """Fill ghost columns in place (last axis) by linear extrapolation."""
    u[..., 0] = 2.0 * u[..., 1] - u[..., 2]
    u[..., -1] = 2.0 * u[..., -2] - u[..., -3]


def _operator_bands(spec, t, xs, dx):
    """Lower, diagonal and upper coefficients of L at interior nodes (upwind drift)."""
    b = spec.drift(t, xs)
    s = spec.diffusion(t, xs)
    D = 0.5 * s * s / (dx * dx)
    lower = D + np.maximum(-b, 0.0) / dx
    upper = D + np.maximum(b, 0.0) / dx
    diag = -2.0 * D - np.abs(b) / dx
    return lower, diag, upper


def _nonlinear(spec, t, xs, u_next, dx):
    """Driver values f_i(t, x, u, sigma * central gradient of u_i) at interior nodes."""
    n = u_next.shape[0]
    grad = (u_next[:, 2:] - u_next[:, :-2]) / (2.0 * dx)
    vol = spec.diffusion(t, xs)
    ys = [u_next[j, 1:-1] for j in range(n)]
    out = np.empty((n, xs.shape[0]))
    for i in range(n):
        try:
            out[i] = spec.driver(i, t, xs, ys, vol * grad[i])
        except DomainError as exc:
            raise SolverError(f"driver f{i + 1} failed at t={t:g}: {exc}") from exc
    return out


def _check_finite(u, t, xs, what):
    bad = ~np.isfinite(u)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise SolverError(f"non-finite {what} in component {i + 1} at t={t:g}, x={xs[j]:g}")


def solve_fd(spec, mesh: SpaceTimeMesh, scheme: str = "semi_implicit") -> GridSolution:
    """March the coupled system backward from T on ``mesh``."""
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if abs(mesh.T - spec.T) > 1e-12 * max(1.0, spec.T):
        raise ValueError(f"mesh ends at {mesh.T}, problem horizon is {spec.T}")
    if scheme == "explicit":
        limit = stable_dt(spec, mesh)
        if mesh.dt > limit * (1 + 1e-12):
            raise StabilityError(f"explicit step dt={mesh.dt:.3e} exceeds the stability bound {limit:.3e}")
    n = spec.n
    xs_all = mesh.x
    xs = xs_all[1:-1]
    times = mesh.t
    dx, dt = mesh.dx, mesh.dt
    U = np.empty((n, mesh.nt + 1, mesh.nx + 2))
    for i in range(n):
        try:
            U[i, -1] = spec.terminal(i, xs_all)
        except DomainError as exc:
            raise SolverError(f"terminal Phi{i + 1} failed: {exc}") from exc
    _check_finite(U[:, -1], mesh.T, xs_all, "terminal value")

    for k in range(mesh.nt - 1, -1, -1):
        u_next = U[:, k + 1]
        if scheme == "explicit":
            lo, di, up = _operator_bands(spec, times[k + 1], xs, dx)
            lu = lo * u_next[:, :-2] + di * u_next[:, 1:-1] + up * u_next[:, 2:]

            def step(react):
                out = np.empty_like(u_next)
                out[:, 1:-1] = u_next[:, 1:-1] + dt * (lu + react)
                _extrapolate(out)
                return out
        else:
            ab = _implicit_matrix(spec, times[k], xs, dx, dt)

            def step(react):
                out = np.empty_like(u_next)
                try:
                    out[:, 1:-1] = solve_banded((1, 1), ab, (u_next[:, 1:-1] + dt * react).T,
                                                check_finite=False).T
                except (np.linalg.LinAlgError, ValueError) as exc:
                    raise SolverError(f"tridiagonal solve failed at t={times[k]:g}: {exc}") from exc
                _extrapolate(out)
                return out

        # Heun predictor-corrector on the reaction term, explicit in f throughout
        f_next = _nonlinear(spec, times[k + 1], xs, u_next, dx)
        pred = step(f_next)
        _check_finite(pred, times[k], xs_all, "grid value")
        U[:, k] = step(0.5 * (f_next + _nonlinear(spec, times[k], xs, pred, dx)))
        _check_finite(U[:, k], times[k], xs_all, "grid value")
    U.flags.writeable = False
    return GridSolution(mesh, U, scheme)


def _implicit_matrix(spec, t, xs, dx, dt):
    """Banded form of I - dt L with the ghost columns substituted into the end rows."""
    lo, di, up = _operator_bands(spec, t, xs, dx)
    # u_0 = 2 u_1 - u_2 and u_{nx+1} = 2 u_nx - u_{nx-1}
    di[0] += 2.0 * lo[0]
    up[0] -= lo[0]
    di[-1] += 2.0 * up[-1]
    lo[-1] -= up[-1]
    ab = np.zeros((3, xs.shape[0]))
    ab[0, 1:] = -dt * up[:-1]
    ab[1] = 1.0 - dt * di
    ab[2, :-1] = -dt * lo[1:]
    return ab


def _snap(f):
    """Round fractional node indices within 1e-9 of an integer, so node queries return stored values."""
    r = np.round(f)
    return np.where(np.abs(f - r) < 1e-9, r, f)


def evaluate(solution: GridSolution, t: float, x: float, component: int = 0) -> float:
    """Bilinear interpolation of component ``component`` (0-based) at (t, x)."""
    m = solution.mesh
    if not 0 <= component < solution.n:
        raise MeshDomainError(f"component {component} out of range for n={solution.n}")
    if not (m.t0 - 1e-12 <= t <= m.T + 1e-12 and m.x_lo - 1e-12 <= x <= m.x_hi + 1e-12):
        raise MeshDomainError(f"({t}, {x}) outside mesh box [{m.t0}, {m.T}] x [{m.x_lo}, {m.x_hi}]")
    ft = _snap(min(max((t - m.t0) / m.dt, 0.0), float(m.nt)))
    fx = _snap(min(max((x - m.x_lo) / m.dx, 0.0), float(m.nx + 1)))
    k = min(int(np.floor(ft)), m.nt - 1)
    j = min(int(np.floor(fx)), m.nx)
    a, c = ft - k, fx - j
    V = solution.values[component]
    return float((1 - a) * ((1 - c) * V[k, j] + c * V[k, j + 1])
                 + a * ((1 - c) * V[k + 1, j] + c * V[k + 1, j + 1]))


def evaluate_many(solution: GridSolution, t, x, component: int = 0) -> np.ndarray:
    """Vectorised :func:`evaluate` over broadcastable arrays ``t`` and ``x``."""
    m = solution.mesh
    t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    if not 0 <= component < solution.n:
        raise MeshDomainError(f"component {component} out of range for n={solution.n}")
    if t.size and (t.min() < m.t0 - 1e-12 or t.max() > m.T + 1e-12
                   or x.min() < m.x_lo - 1e-12 or x.max() > m.x_hi + 1e-12):
        raise MeshDomainError("query outside the mesh box")
    ft = _snap(np.clip((t - m.t0) / m.dt, 0.0, float(m.nt)))
    fx = _snap(np.clip((x - m.x_lo) / m.dx, 0.0, float(m.nx + 1)))
    k = np.minimum(np.floor(ft).astype(int), m.nt - 1)
    j = np.minimum(np.floor(fx).astype(int), m.nx)
    a, c = ft - k, fx - j
    V = solution.values[component]
    return ((1 - a) * ((1 - c) * V[k, j] + c * V[k, j + 1])
            + a * ((1 - c) * V[k + 1, j] + c * V[k + 1, j + 1]))


@dataclass
class CrossValidation:
    rows: list  # dicts: t, x, component, mc, mc_stderr, grid, discrepancy
    max_discrepancy: float
    settings: dict

    def to_dict(self) -> dict:
        return {"rows": self.rows, "max_discrepancy": self.max_discrepancy, "settings": self.settings}


def cross_validate(spec, grid: GridSolution, probes, paths: int = 20_000, steps: int = 64,
                   seed: int = 0, basis_degree: int = 3, workers: int = 1) -> CrossValidation:
    """Compare the grid against a Monte Carlo solve started at each probe (t, x)."""
    m = grid.mesh
    rows = []
    for p, (t, x) in enumerate(probes):
        if not (m.t0 <= t < m.T and m.x_lo < x < m.x_hi):
            raise MeshDomainError(f"probe ({t}, {x}) is not interior to the mesh")
        ens = simulate(spec, t, x, steps, paths, _rng.derive_seed(seed, "probe", p), workers=workers)
        sol = solve_lsmc(spec, ens, basis_degree)
        y0, se = sol.initial_value(), sol.initial_stderr()
        for i in range(spec.n):
            g = evaluate(grid, t, x, i)
            rows.append({"t": float(t), "x": float(x), "component": i + 1, "mc": float(y0[i]),
                         "mc_stderr": float(se[i]), "grid": g, "discrepancy": abs(float(y0[i]) - g)})
    worst = max((r["discrepancy"] for r in rows), default=0.0)
    logger.info("cross-validation over %d probe(s): max discrepancy %.3e", len(probes), worst)
    return CrossValidation(rows, worst, {"paths": paths, "steps": steps, "seed": seed,
                                         "basis_degree": basis_degree})


# -- export ---------------------------------------------------------------------

def write_csv(solution: GridSolution, path) -> None:
    """Rows (t, x, component, value) over every node, ghost columns included."""
    ts, xs = solution.mesh.t, solution.mesh.x
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "component", "value"])
        for i in range(solution.n):
            for k, t in enumerate(ts):
                for j, x in enumerate(xs):
                    w.writerow([repr(float(t)), repr(float(x)), i + 1, repr(float(solution.values[i, k, j]))])


_HEADER = struct.Struct("<4sIIIII4d")


def write_binary(solution: GridSolution, path) -> None:
    """Binary cache.

    Layout (little endian): magic ``b"FBGD"``, uint32 version, uint32 scheme
    code (0 explicit, 1 semi_implicit), uint32 n, uint32 nt, uint32 nx,
    float64 x_lo, x_hi, t0, T, then ``n * (nt+1) * (nx+2)`` float64 values in
    C order.
    """
    m = solution.mesh
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, SCHEMES.index(solution.scheme), solution.n,
                        m.nt, m.nx, m.x_lo, m.x_hi, m.t0, m.T)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(solution.values, dtype="<f8").tobytes())


def read_binary(path) -> GridSolution:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("file too short for a grid cache header")
    magic, version, scheme, n, nt, nx, x_lo, x_hi, t0, T = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported grid cache version {version}")
    count = n * (nt + 1) * (nx + 2)
    values = np.frombuffer(raw, dtype="<f8", count=count, offset=_HEADER.size).reshape(n, nt + 1, nx + 2).copy()
    values.flags.writeable = False
    return GridSolution(SpaceTimeMesh(x_lo, x_hi, nx, nt, T, t0), values, SCHEMES[scheme])


def grid_from_function(funcs, mesh: SpaceTimeMesh, label: str = "candidate") -> GridSolution:
    """Sample candidate functions ``u_i(t, x)`` (vectorised) on every node of ``mesh``."""
    T_, X_ = np.meshgrid(mesh.t, mesh.x, indexing="ij")
    values = np.array([np.broadcast_to(np.asarray(f(T_, X_), dtype=float), T_.shape) for f in funcs])
    values.flags.writeable = False
    return GridSolution(mesh, values, label, "sampled")
