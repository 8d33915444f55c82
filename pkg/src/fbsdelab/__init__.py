"""Numerical companion for coupled forward-backward SDE systems and their PDEs."""

import logging

from .backward import (
    BackwardSolution, ComparisonCertificate, LocalExpansionProbe,
    comparison_certificate, local_expansion_probe, solve_lsmc, solve_picard,
)
from .errors import FBSDEError
from .expr import ExprAst, eval_expr, parse, to_source
from .forward import PathEnsemble, TimeGrid, restart_ensemble, simulate
from .mollify import MollifiedProblem, error_sweep, mollify, mollify_eval
from .problem import AssumptionReport, ProblemSpec, audit_assumptions, load_problem

logging.getLogger(__name__).addHandler(logging.NullHandler())

__version__ = "0.1.0"

__all__ = [
    "AssumptionReport", "BackwardSolution", "ComparisonCertificate", "ExprAst", "FBSDEError",
    "LocalExpansionProbe", "MollifiedProblem", "PathEnsemble", "ProblemSpec", "TimeGrid",
    "audit_assumptions", "comparison_certificate", "error_sweep", "eval_expr", "load_problem",
    "local_expansion_probe", "mollify", "mollify_eval", "parse", "restart_ensemble", "simulate",
    "solve_lsmc", "solve_picard", "to_source",
]
