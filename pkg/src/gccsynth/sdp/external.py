"""Optional cvxpy backend behind the solver interface (not a runtime dependency)."""

from __future__ import annotations

import math

import numpy as np

from .problem import SdpProblem
from .solver import SdpSolution, SolverOptions, Status, register_solver, strict_margin


class CvxpySolver:
    name = "cvxpy"

    # interior-point backends first; first-order ones are too inaccurate for cross-checks
    PREFERRED = ("CLARABEL", "MOSEK", "CVXOPT", "SCS")

    def __init__(self, backend: str | None = None):
        import cvxpy as cp

        if backend is None:
            installed = set(cp.installed_solvers())
            backend = next((b for b in self.PREFERRED if b in installed), None)
        self.backend = backend

    def solve(self, problem: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution:
        import cvxpy as cp

        opts = opts or SolverOptions()
        p = problem.seal()
        x = cp.Variable(p.nvars)
        cons = []
        for b in p.lmi_blocks:
            g = b.f0 + strict_margin(b, opts) * np.eye(b.dim)
            expr = g + sum((x[i] * b.fi[i] for i in np.flatnonzero(np.any(b.fi, axis=(1, 2)))),
                           start=np.zeros((b.dim, b.dim)))
            cons.append(0.5 * (expr + expr.T) << 0)
        E, f = p.equalities
        if E.shape[0]:
            cons.append(E @ x == f)
        prob = cp.Problem(cp.Minimize(p.objective @ x + p.objective_offset), cons)
        try:
            prob.solve(solver=self.backend)
        except cp.error.SolverError as e:
            return SdpSolution(Status.NUMERICAL_FAILURE, np.full(p.nvars, math.nan), math.nan,
                               math.nan, 0, math.inf, message=str(e))
        if prob.status in ("infeasible", "infeasible_inaccurate"):
            return SdpSolution(Status.INFEASIBLE, np.full(p.nvars, math.nan), math.nan,
                               math.nan, 0, math.inf, message=prob.status)
        if x.value is None or prob.status not in ("optimal", "optimal_inaccurate"):
            return SdpSolution(Status.NUMERICAL_FAILURE, np.full(p.nvars, math.nan), math.nan,
                               math.nan, 0, math.inf, message=prob.status)
        xv = np.asarray(x.value, dtype=float)
        eigs = {b.name: float(np.linalg.eigvalsh(b.value(xv))[-1]) for b in p.lmi_blocks}
        stats = prob.solver_stats
        return SdpSolution(Status.OPTIMAL, xv, float(prob.value), max(eigs.values(), default=-math.inf),
                           int(stats.num_iters or 0), 0.0, message=f"cvxpy/{stats.solver_name}: {prob.status}",
                           block_max_eigs=eigs)


def available() -> bool:
    try:
        import cvxpy  # noqa: F401
    except ImportError:
        return False
    return True


register_solver("cvxpy", CvxpySolver)
