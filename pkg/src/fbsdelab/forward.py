"""Euler-Maruyama simulation of the forward diffusion.

Brownian increments come from counter-based streams keyed by
``(seed, path block)``; within a block they are laid out path-major, so the
increment of path m at step k depends only on (seed, m, k, steps) and never on
the number of workers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from .errors import DomainError, SolverError

BLOCK_PATHS = 1024


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    steps: int

    def __post_init__(self):
        if self.steps < 1 or int(self.steps) != self.steps:
            raise ValueError(f"steps must be a positive integer, got {self.steps!r}")
        if not self.T > self.t0:
            raise ValueError(f"need t0 < T, got t0={self.t0}, T={self.T}")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.steps

    @property
    def nodes(self) -> np.ndarray:
        out = self.t0 + self.dt * np.arange(self.steps + 1)
        out[-1] = self.T
        return out


@dataclass(frozen=True)
class PathEnsemble:
    grid: TimeGrid
    x0: float
    paths: np.ndarray  # (M, N+1)
    dW: np.ndarray  # (M, N)
    seed: int
    scheme: str = "euler_maruyama"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def steps(self) -> int:
        return self.grid.steps

    @property
    def dt(self) -> float:
        return self.grid.dt


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def brownian_increments(seed: int, n_paths: int, steps: int, dt: float, workers: int = 1) -> np.ndarray:
    starts = range(0, n_paths, BLOCK_PATHS)

    def block(start):
        rows = min(BLOCK_PATHS, n_paths - start)
        rng = _rng.substream(seed, _rng.FORWARD, start // BLOCK_PATHS)
        return rng.standard_normal((rows, steps))

    z = np.concatenate(_rng.map_blocks(block, starts, workers), axis=0)
    return z * np.sqrt(dt)


def euler_paths(problem, grid: TimeGrid, x0, dW: np.ndarray) -> np.ndarray:
    """Euler-Maruyama paths driven by the given increments. ``x0`` may be per path."""
    n_paths, steps = dW.shape
    if steps != grid.steps:
        raise ValueError("increments do not match the time grid")
    X = np.empty((n_paths, steps + 1))
    X[:, 0] = x0
    dt = grid.dt
    times = grid.nodes
    for k in range(steps):
        xk = X[:, k]
        try:
            drift = problem.drift(times[k], xk)
            vol = problem.diffusion(times[k], xk)
        except DomainError as exc:
            idx = (exc.point or {}).get("index", (None,))
            raise SolverError(f"coefficient evaluation failed on path {idx[0]}, step {k}: {exc}") from exc
        X[:, k + 1] = xk + drift * dt + vol * dW[:, k]
        if not np.all(np.isfinite(X[:, k + 1])):
            m = int(np.argmax(~np.isfinite(X[:, k + 1])))
            raise SolverError(f"forward path {m} left the finite range at step {k + 1}")
    return X


def simulate(
    spec,
    t: float,
    x: float,
    steps: int,
    n_paths: int,
    seed: int,
    t_end: float | None = None,
    workers: int = 1,
) -> PathEnsemble:
    """Simulate ``n_paths`` Euler-Maruyama paths of X from (t, x) to ``t_end`` (default: horizon)."""
    T = spec.T if t_end is None else float(t_end)
    if not 0 <= t < T:
        raise ValueError(f"start time must satisfy 0 <= t < {T}, got {t}")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    grid = TimeGrid(float(t), T, int(steps))
    dW = brownian_increments(seed, n_paths, grid.steps, grid.dt, workers)
    X = euler_paths(spec, grid, float(x), dW)
    return PathEnsemble(grid, float(x), _freeze(X), _freeze(dW), int(seed))


def restart_ensemble(
    parent: PathEnsemble,
    at_step: int,
    spec,
    steps: int,
    n_paths: int,
    seed: int,
    paths=None,
    workers: int = 1,
) -> dict[int, PathEnsemble]:
    """Fresh ensembles started from parent states X[m, at_step] at time t_{at_step}.

    Returns ``{parent path index: child ensemble}``. Child seeds are derived
    from ``(seed, m)``, so each child is reproducible on its own.
    """
    if not 0 <= at_step <= parent.steps:
        raise ValueError(f"at_step must lie in [0, {parent.steps}]")
    t_start = float(parent.grid.nodes[at_step])
    T = parent.grid.T
    if at_step == parent.steps:
        raise ValueError("cannot restart at the terminal time")
    selected = range(parent.n_paths) if paths is None else paths
    out = {}
    for m in selected:
        child_seed = _rng.derive_seed(seed, "child", int(m))
        out[int(m)] = simulate(spec, t_start, float(parent.paths[m, at_step]), steps, n_paths,
                               child_seed, t_end=T, workers=workers)
    return out


def refine_increments(dW: np.ndarray, dt: float, factor: int, seed: int) -> np.ndarray:
    """Split every increment into ``factor`` pieces by Brownian-bridge sampling.

    The refined increments sum back exactly (up to rounding) to the coarse ones.
    """
    rng = _rng.substream(seed, _rng.FORWARD, 10**6 + factor)
    M, N = dW.shape
    fine_dt = dt / factor
    # iid pieces, then subtract the deviation of their sum from the coarse increment
    pieces = rng.standard_normal((M, N, factor)) * np.sqrt(fine_dt)
    pieces += (dW - pieces.sum(axis=2))[:, :, None] / factor
    return pieces.reshape(M, N * factor)


def dump_csv(ensemble: PathEnsemble, path) -> None:
    nodes = ensemble.grid.nodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "step", "t", "X"])
        for m in range(ensemble.n_paths):
            for k in range(ensemble.steps + 1):
                w.writerow([m, k, repr(float(nodes[k])), repr(float(ensemble.paths[m, k]))])
