"""Solvers for large sparse nonlinear eigenvalue problems T(lambda) x = 0."""

from . import functions
from .core import (
    Ellipse,
    EigenPair,
    EigenSolution,
    Interval,
    NepError,
    NepOperator,
    Polygon,
    Rectangle,
    Settings,
    apply_resolvent,
    backward_error,
)
from .interpol import cheb_coeffs, cheb_nodes, interpol_solve
from .linalg import LinearSolverConfig
from .narnoldi import narnoldi_solve
from .newton import rii_solve, slp_solve
from .nleigs import auto_singularities, divided_differences, leja_bagby, nleigs_solve
from .problems import (
    gen_delay,
    gen_loaded_string,
    load_problem_manifest,
    read_matrix_market,
    write_matrix_market,
)

__version__ = "0.1.0"

__all__ = [
    "functions",
    "NepOperator",
    "NepError",
    "Settings",
    "EigenPair",
    "EigenSolution",
    "Interval",
    "Rectangle",
    "Ellipse",
    "Polygon",
    "LinearSolverConfig",
    "backward_error",
    "apply_resolvent",
    "slp_solve",
    "rii_solve",
    "narnoldi_solve",
    "interpol_solve",
    "nleigs_solve",
    "cheb_nodes",
    "cheb_coeffs",
    "leja_bagby",
    "divided_differences",
    "auto_singularities",
    "gen_delay",
    "gen_loaded_string",
    "read_matrix_market",
    "write_matrix_market",
    "load_problem_manifest",
]
