"""Least-squares projection onto polynomials in the forward state.

Columns are powers of the standardised state ``(X - mean) / std``; Gram
entries and right-hand sides are reduced with numpy's pairwise summation so the
result does not depend on thread counts. A ridge of 1e-10 on the normalised
Gram matrix keeps degenerate designs (all paths at one point) solvable; there
the projection collapses to the sample mean. One step of iterative refinement
against the unregularised Gram matrix removes the ridge's shrinkage on
well-posed designs, so targets already in the basis span are reproduced to
rounding.
"""

from __future__ import annotations

import numpy as np

from ..errors import SingularDesignError

RIDGE = 1e-10
MAX_CONDITION = 1e13


class Projector:
    def __init__(self, x: np.ndarray, degree: int, step: int = -1):
        if degree < 0:
            raise ValueError("basis degree must be >= 0")
        x = np.asarray(x, dtype=float)
        self.m = x.shape[0]
        mean = np.sum(x) / self.m
        centred = x - mean
        std = np.sqrt(np.sum(centred * centred) / self.m)
        self.degenerate = not std > 1e-12 * (1.0 + abs(mean))
        p = degree + 1
        cols = [np.ones(self.m)]
        if not self.degenerate:
            xi = centred / std
            for _ in range(degree):
                cols.append(cols[-1] * xi)
        else:
            cols.extend(np.zeros(self.m) for _ in range(degree))
        self.cols = cols
        self.p_eff = 1 if self.degenerate else p
        gram = np.empty((p, p))
        for a in range(p):
            for b in range(a, p):
                gram[a, b] = gram[b, a] = np.sum(cols[a] * cols[b]) / self.m
        self.gram = gram
        self.gram_ridge = gram + RIDGE * np.eye(p)
        self.condition = float(np.linalg.cond(self.gram_ridge))
        if not np.isfinite(self.condition) or self.condition > MAX_CONDITION:
            raise SingularDesignError(step, self.condition)

    def coefficients(self, y: np.ndarray) -> np.ndarray:
        """Regression coefficients for one target (M,) or several targets (r, M)."""
        y2 = np.atleast_2d(y)
        rhs = np.array([[np.sum(c * row) / self.m for c in self.cols] for row in y2])
        coef = np.linalg.solve(self.gram_ridge, rhs.T)
        coef += np.linalg.solve(self.gram_ridge, rhs.T - self.gram @ coef)
        return coef.T

    def fitted(self, coef: np.ndarray) -> np.ndarray:
        coef = np.atleast_2d(coef)
        out = np.zeros((coef.shape[0], self.m))
        for r in range(coef.shape[0]):
            acc = np.zeros(self.m)
            for a, c in enumerate(self.cols):
                acc = acc + coef[r, a] * c
            out[r] = acc
        return out

    def project(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Fitted values and the standard error of the fitted conditional mean."""
        y2 = np.atleast_2d(y)
        fit = self.fitted(self.coefficients(y2))
        resid = y2 - fit
        dof = max(self.m - self.p_eff, 1)
        s = np.sqrt(np.sum(resid * resid, axis=1) / dof)
        stderr = s * np.sqrt(self.p_eff / self.m)
        if np.ndim(y) == 1:
            return fit[0], stderr[0]
        return fit, stderr
