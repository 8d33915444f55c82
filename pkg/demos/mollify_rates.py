"""Smoothing error of |x|, sin(x) and an affine map as the kernel width shrinks.

For |x| the sup error is eps * sqrt(2/pi), reached at x = 0. For sin(x) the
smoothed function is exp(-eps^2 / 2) sin(x), so the error falls like eps^2.
Run with ``python demos/mollify_rates.py``.
"""

import math

import numpy as np

from fbsdelab.mollify import error_sweep
from fbsdelab.problem import load_problem

spec = load_problem({"n": 1, "T": 1.0, "b": "abs(x)", "sigma": "sin(x)", "drivers": ["2*y1 - z"],
                     "terminals": ["3*x - 1"]})
probes = [(0.0, x, 0.5, 0.1) for x in np.linspace(-3, 3, 601)]
rows = error_sweep(spec, [0.2, 0.1, 0.05, 0.025], probes)

print(f"{'coefficient':>11} {'eps':>6} {'sup error':>11} {'error/eps':>10}")
for r in rows:
    print(f"{r['coefficient']:>11} {r['epsilon']:6.3f} {r['sup_error']:11.3e} {r['ratio']:10.5f}")
print(f"sqrt(2/pi) = {math.sqrt(2 / math.pi):.5f}")
