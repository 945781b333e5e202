"""Small dense conic-program layer: modelling, fragments, and the
operator-splitting solver used by the synthesis SDPs."""

from .problem import (
    Cone,
    ConicProblem,
    HinfFragment,
    LinExpr,
    ProblemBuilder,
    PSDVar,
    dump_problem,
    hinf_lmi_block,
    load_problem,
    patch_gamma,
    spectral_norm_constraint,
    svec,
    svec_indices,
    svec_len,
    unsvec,
)
from .solver import ConicSolution, ConicSolver, SolverLimitError, solve_conic

__all__ = [
    "Cone",
    "ConicProblem",
    "ConicSolution",
    "ConicSolver",
    "HinfFragment",
    "LinExpr",
    "ProblemBuilder",
    "PSDVar",
    "SolverLimitError",
    "dump_problem",
    "hinf_lmi_block",
    "load_problem",
    "patch_gamma",
    "solve_conic",
    "spectral_norm_constraint",
    "svec",
    "svec_indices",
    "svec_len",
    "unsvec",
]
