"""Backward solvers and the diagnostics built on them."""

from .comparison import ComparisonCertificate, comparison_certificate
from .expansion import GammaJet, LocalExpansionProbe, local_expansion_probe
from .lsmc import BackwardSolution, backward_sweep, dump_csv, solve_lsmc, solve_picard

__all__ = [
    "BackwardSolution", "ComparisonCertificate", "GammaJet", "LocalExpansionProbe",
    "backward_sweep", "comparison_certificate", "dump_csv", "local_expansion_probe",
    "solve_lsmc", "solve_picard",
]
