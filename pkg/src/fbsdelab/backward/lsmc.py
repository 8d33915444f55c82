"""Regression-based backward sweep for the coupled system.

At step k, with Delta the step size and P_k the least-squares projection on
polynomials in X[k]::

    Z^i[k] = P_k( Y^i[k+1] dW[k] / Delta )
    Y^i[k] = P_k( Y^i[k+1] + f_i(t_k, X[k], Y[k+1], Z^i[k]) Delta )

Every component reads the same (k+1)-slice of the full vector Y, so no inner
fixed point is needed. :func:`solve_picard` iterates the same recursion with
the drivers frozen at the previous iterate.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import DomainError, NonConvergenceError, SolverError
from ..forward import PathEnsemble, TimeGrid
from .regression import Projector

logger = logging.getLogger(__name__)

DEFAULT_DEGREE = 3


@dataclass(frozen=True)
class BackwardSolution:
    grid: TimeGrid
    Y: np.ndarray  # (n, M, N+1)
    Z: np.ndarray  # (n, M, N)
    method: str
    basis_degree: int
    picard_iterations: int = 0
    residual_history: tuple = ()
    stderr: np.ndarray = field(default=None, repr=False)  # (n, N+1) projection standard errors

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def n_paths(self) -> int:
        return self.Y.shape[1]

    @property
    def tolerance(self) -> np.ndarray:
        """Per-component solver tolerance: the largest projection standard error over steps."""
        return np.max(self.stderr, axis=1)

    def initial_value(self) -> np.ndarray:
        """Mean of Y at the first node (all paths coincide when the ensemble starts at one point)."""
        return np.mean(self.Y[:, :, 0], axis=1)

    def initial_stderr(self) -> np.ndarray:
        """Standard error of :meth:`initial_value`, including accumulated regression noise."""
        return self.stderr[:, 0].copy()

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "basis_degree": self.basis_degree,
            "n": self.n,
            "n_paths": self.n_paths,
            "steps": self.grid.steps,
            "t0": self.grid.t0,
            "T": self.grid.T,
            "initial_value": self.initial_value().tolist(),
            "initial_stderr": self.initial_stderr().tolist(),
            "tolerance": self.tolerance.tolist(),
            "picard_iterations": self.picard_iterations,
            "residual_history": list(self.residual_history),
        }


def evaluate_drivers(spec, t, x, ys, zs, step: int) -> np.ndarray:
    """All driver values, (n, M); component i sees the full ``ys`` and its own ``zs[i]``."""
    out = np.empty((spec.n, np.shape(x)[0]))
    for i in range(spec.n):
        try:
            out[i] = spec.driver(i, t, x, list(ys), zs[i])
        except DomainError as exc:
            raise SolverError(f"driver f{i + 1} failed at step {step}: {exc}") from exc
        if not np.all(np.isfinite(out[i])):
            m = int(np.argmax(~np.isfinite(out[i])))
            raise SolverError(f"non-finite value of driver f{i + 1} at step {step}, path {m}")
    return out


def terminal_values(spec, x_end: np.ndarray) -> np.ndarray:
    out = np.empty((spec.n, x_end.shape[0]))
    for i in range(spec.n):
        try:
            out[i] = spec.terminal(i, x_end)
        except DomainError as exc:
            raise SolverError(f"terminal Phi{i + 1} failed: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise SolverError("non-finite terminal value")
    return out


DriverFn = Callable[[int, float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def backward_sweep(ensemble: PathEnsemble, terminal: np.ndarray, driver_fn: DriverFn | None,
                   basis_degree: int = DEFAULT_DEGREE):
    """Run the regression recursion from ``terminal`` (n, M).

    ``driver_fn(k, t_k, X_k, Y_next, Z_k)`` returns the (n, M) driver values
    used at step k; ``None`` means a zero driver. Returns ``(Y, Z, stderr)``.

    The step-0 standard error is the larger of the projection error and the
    spread of the pathwise estimator ``Y[N] + sum_k f_k Delta``. Regression
    noise accumulates over the sweep, so the last projection alone understates
    the error of the initial value by an order of magnitude.
    """
    if basis_degree < 0:
        raise ValueError("basis_degree must be >= 0")
    n = terminal.shape[0]
    M, N = ensemble.n_paths, ensemble.steps
    dt = ensemble.dt
    nodes = ensemble.grid.nodes
    X, dW = ensemble.paths, ensemble.dW
    Y = np.empty((n, M, N + 1))
    Z = np.empty((n, M, N))
    stderr = np.zeros((n, N + 1))
    Y[:, :, N] = terminal
    pathwise = np.array(terminal, dtype=float)
    for k in range(N - 1, -1, -1):
        proj = Projector(X[:, k], basis_degree, step=k)
        y_next = Y[:, :, k + 1]
        Z[:, :, k], _ = proj.project(y_next * (dW[:, k] / dt))
        target = y_next
        if driver_fn is not None:
            increment = driver_fn(k, nodes[k], X[:, k], y_next, Z[:, :, k]) * dt
            target = y_next + increment
            pathwise += increment
        Y[:, :, k], stderr[:, k] = proj.project(target)
    spread = np.sqrt(np.sum((pathwise - np.mean(pathwise, axis=1, keepdims=True)) ** 2, axis=1)
                     / max(M - 1, 1) / M)
    stderr[:, 0] = np.maximum(stderr[:, 0], spread)
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(Z))):
        raise SolverError("backward sweep produced non-finite values")
    return Y, Z, stderr


def _freeze(*arrays):
    for a in arrays:
        a.flags.writeable = False


def solve_lsmc(spec, ensemble: PathEnsemble, basis_degree: int = DEFAULT_DEGREE) -> BackwardSolution:
    """Explicit regression solve of the coupled backward system on ``ensemble``."""
    _check_compatible(spec, ensemble)
    terminal = terminal_values(spec, ensemble.paths[:, -1])

    def drivers(k, t, x, y_next, z):
        return evaluate_drivers(spec, t, x, y_next, z, k)

    Y, Z, stderr = backward_sweep(ensemble, terminal, drivers, basis_degree)
    _freeze(Y, Z, stderr)
    return BackwardSolution(ensemble.grid, Y, Z, "lsmc", basis_degree, 0, (), stderr)


def solve_picard(spec, ensemble: PathEnsemble, max_iter: int = 50, tol: float = 1e-10,
                 basis_degree: int = DEFAULT_DEGREE) -> BackwardSolution:
    """Picard iteration on the driver-frozen recursion.

    Starts from the conditional-expectation extension of the terminal values
    (the zero-driver sweep); each sweep evaluates the drivers at the previous
    iterate and stops once the sup-norm change of Y falls below ``tol``.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    _check_compatible(spec, ensemble)
    terminal = terminal_values(spec, ensemble.paths[:, -1])
    Y, Z, stderr = backward_sweep(ensemble, terminal, None, basis_degree)
    history = []
    for it in range(1, max_iter + 1):
        Y_old, Z_old = Y, Z

        def frozen(k, t, x, _y_next, _z):
            return evaluate_drivers(spec, t, x, Y_old[:, :, k + 1], Z_old[:, :, k], k)

        Y, Z, stderr = backward_sweep(ensemble, terminal, frozen, basis_degree)
        resid = float(np.max(np.abs(Y - Y_old)))
        history.append(resid)
        logger.debug("picard iteration %d: residual %.3e", it, resid)
        if resid < tol:
            _freeze(Y, Z, stderr)
            return BackwardSolution(ensemble.grid, Y, Z, "picard", basis_degree, it, tuple(history), stderr)
    raise NonConvergenceError(
        f"Picard iteration did not reach tol={tol:g} in {max_iter} iterations "
        f"(last residual {history[-1]:.3e})",
        history,
    )


def _check_compatible(spec, ensemble: PathEnsemble) -> None:
    if abs(ensemble.grid.T - spec.T) > 1e-12 * max(1.0, spec.T):
        raise ValueError(f"ensemble ends at {ensemble.grid.T}, problem horizon is {spec.T}")


def dump_csv(solution: BackwardSolution, path) -> None:
    """Write rows (component, path, step, t, Y, Z); Z is empty at the terminal step."""
    nodes = solution.grid.nodes
    n, M, N1 = solution.Y.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "path", "step", "t", "Y", "Z"])
        for i in range(n):
            for m in range(M):
                for k in range(N1):
                    z = repr(float(solution.Z[i, m, k])) if k < N1 - 1 else ""
                    w.writerow([i + 1, m, k, repr(float(nodes[k])), repr(float(solution.Y[i, m, k])), z])
