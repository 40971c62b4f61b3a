"""Small dense semidefinite programming layer."""

from .problem import Affine, AffineBlock, SdpProblem, block_diag, bmat, kron_eye, sym, trace
from .solver import (BarrierSolver, SdpSolution, SolverOptions, Status, get_solver,
                     register_solver, solve, strict_margin)
from .sdpa import SdpaData, read_sdpa, to_sdpa, write_sdpa
from . import external  # registers the optional "cvxpy" backend (imported lazily on use)

__all__ = [
    "Affine", "AffineBlock", "SdpProblem", "block_diag", "bmat", "kron_eye", "sym", "trace",
    "BarrierSolver", "SdpSolution", "SolverOptions", "Status", "get_solver",
    "register_solver", "solve", "strict_margin",
    "SdpaData", "read_sdpa", "to_sdpa", "write_sdpa",
]
