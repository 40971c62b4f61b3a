"""Log-det barrier path-following solver for small dense SDPs.

Pipeline:

1. Equalities ``E x = f`` are eliminated: ``x = x0 + N y`` with ``x0`` the
   least-squares particular solution and ``N`` an orthonormal null-space
   basis of ``E``.  Directions of ``y`` that touch no LMI block are dropped
   (they must not move the objective, otherwise the problem is unbounded).
2. Phase I minimizes a scalar slack ``s`` subject to ``F(x) <= s I``; a
   strictly feasible point is found as soon as ``s < 0``.
3. Phase II minimizes ``t c'x - sum_b logdet(-F_b(x))`` by damped Newton
   steps with backtracking, multiplying ``t`` by 10 per outer step.  The
   duality gap after centering is ``sum_b dim_b / t``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np
from scipy import linalg as sla

from .problem import AffineBlock, SdpProblem

log = logging.getLogger(__name__)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class SolverOptions:
    eps: float = 1e-7               # strict-inequality margin before scaling
    max_outer: int = 60
    max_newton: int = 400
    gap_rtol: float = 1e-6          # stop when gap <= gap_rtol * (1 + |obj|)
    feas_tol: float = 1e-7          # Phase-I optimum above this => infeasible
    t_factor: float = 10.0
    center_tol: float = 1e-8        # Newton decrement^2 / 2
    eq_rtol: float = 1e-10
    radius: float = 1e6             # feasibility radius ||x - x0|| <= radius

    def with_overrides(self, **kw) -> "SolverOptions":
        return replace(self, **kw)


@dataclass
class SdpSolution:
    status: Status
    x: np.ndarray
    objective_value: float
    max_constraint_eig: float
    iterations: int
    gap_estimate: float
    phase1_value: float = math.nan
    message: str = ""
    block_max_eigs: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def strict_margin(block: AffineBlock | None = None, opts: SolverOptions | None = None) -> float:
    """Margin ``eps * max(1, max_i ||F_i||_F)`` for a strict block, else 0."""
    opts = opts or SolverOptions()
    if block is None:
        return opts.eps
    if not block.strict:
        return 0.0
    scale = 1.0
    if block.fi.shape[0]:
        scale = max(scale, float(np.max(np.sqrt(np.einsum("kij,kij->k", block.fi, block.fi)))))
    return opts.eps * scale


class Solver(Protocol):
    def solve(self, problem: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution: ...


class _Budget:
    def __init__(self, limit: int):
        self.limit = limit
        self.used = 0

    def take(self) -> bool:
        self.used += 1
        return self.used <= self.limit


class _Reduced:
    """Blocks ``G_b(z) = C_b + sum_k z_k A_bk`` that must satisfy ``G_b < 0``, plus ``||z|| < radius``.

    The ball keeps the barrier bounded below when the feasible set has
    recession directions.
    """

    def __init__(self, consts: list[np.ndarray], coefs: list[np.ndarray], c: np.ndarray, radius: float):
        self.consts = consts
        self.coefs = coefs
        self.c = c
        self.m = c.size
        self.r2 = radius * radius
        self.total_dim = sum(cb.shape[0] for cb in consts) + 1

    def blocks_at(self, z: np.ndarray) -> list[np.ndarray]:
        return [cb + np.tensordot(z, ab, axes=1) for cb, ab in zip(self.consts, self.coefs)]

    def barrier(self, z: np.ndarray, shift: float = 0.0) -> float:
        """``-sum logdet(shift I - G_b(z)) - log(radius^2 - ||z||^2)``, ``inf`` outside the domain."""
        room = self.r2 - float(z @ z)
        if room <= 0.0:
            return math.inf
        val = -math.log(room)
        for g in self.blocks_at(z):
            s = shift * np.eye(g.shape[0]) - g
            try:
                l = np.linalg.cholesky(s)
            except np.linalg.LinAlgError:
                return math.inf
            val -= 2.0 * float(np.sum(np.log(np.diag(l))))
        return val

    def derivs(self, z: np.ndarray, shift: float = 0.0, with_shift: bool = False):
        """Barrier value, gradient, Hessian in ``z`` (and in ``shift`` if requested)."""
        m = self.m
        n = m + 1 if with_shift else m
        grad = np.zeros(n)
        hess = np.zeros((n, n))
        room = self.r2 - float(z @ z)
        if room <= 0.0:
            raise np.linalg.LinAlgError("outside the feasibility radius")
        val = -math.log(room)
        grad[:m] = 2.0 * z / room
        hess[:m, :m] = 2.0 * np.eye(m) / room + 4.0 * np.outer(z, z) / room ** 2
        for g, a in zip(self.blocks_at(z), self.coefs):
            d = g.shape[0]
            s = shift * np.eye(d) - g
            l = np.linalg.cholesky(s)
            val -= 2.0 * float(np.sum(np.log(np.diag(l))))
            if with_shift:
                # d/d shift of S is +I, i.e. the coefficient of shift in G is -I
                a = np.concatenate([a, -np.eye(d)[None]], axis=0)
            if a.shape[0] == 0:
                continue
            k = a.shape[0]
            # W_k = L^-1 A_k, then Ahat_k = L^-1 W_k^T (A_k symmetric)
            w = sla.solve_triangular(l, a.transpose(1, 0, 2).reshape(d, k * d), lower=True, check_finite=False)
            wt = np.ascontiguousarray(w.reshape(d, k, d).transpose(2, 1, 0).reshape(d, k * d))
            h = sla.solve_triangular(l, wt, lower=True, check_finite=False)
            ahat = h.reshape(d, k, d).transpose(1, 0, 2)
            flat = ahat.reshape(ahat.shape[0], d * d)
            grad += np.trace(ahat, axis1=1, axis2=2)
            hess += flat @ flat.T
        return val, grad, hess


_LOOSE_DEC2 = 1e-4


class InconsistentEqualities(ValueError):
    pass


def eliminate_equalities(E: np.ndarray, f: np.ndarray, rtol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """``(x0, N)`` with ``E (x0 + N y) = f`` for all ``y`` and orthonormal columns in ``N``.

    Dependent rows with a consistent right-hand side are absorbed by the rank
    cutoff; an inconsistent system raises ``InconsistentEqualities``.
    """
    n = E.shape[1]
    if not E.shape[0]:
        return np.zeros(n), np.eye(n)
    u, sv, vt = np.linalg.svd(E, full_matrices=True)
    rank = int(np.sum(sv > rtol * max(1.0, sv[0] if sv.size else 0.0)))
    x0 = vt[:rank].T @ ((u[:, :rank].T @ f) / sv[:rank])
    resid = float(np.linalg.norm(E @ x0 - f))
    if resid > 1e-8 * (1.0 + float(np.linalg.norm(f))):
        raise InconsistentEqualities(f"inconsistent equalities (residual {resid:.3e})")
    return x0, vt[rank:].T


def reduced_blocks(blocks, x0: np.ndarray, nsp: np.ndarray, opts: SolverOptions):
    """Constant terms (margin included) and coefficients of each block in the null-space coordinates."""
    consts = [b.value(x0) + strict_margin(b, opts) * np.eye(b.dim) for b in blocks]
    coefs = [np.einsum("ik,ijl->kjl", nsp, b.fi, optimize=True) for b in blocks]
    return consts, coefs


def _newton_center(obj_grad: np.ndarray, t: float, point: np.ndarray, f_eval: Callable[[np.ndarray], float],
                   d_eval: Callable, budget: _Budget, tol: float,
                   stop: Callable[[np.ndarray], bool] | None = None) -> tuple[np.ndarray, str]:
    """Minimize ``t * obj_grad' v + barrier(v)`` from a strictly feasible ``point``."""
    v = point
    while True:
        if stop is not None and stop(v):
            return v, "stopped"
        try:
            bval, bgrad, bhess = d_eval(v)
        except np.linalg.LinAlgError:
            return v, "breakdown"
        g = t * obj_grad + bgrad
        try:
            cf = sla.cho_factor(bhess, check_finite=False)
            dv = -sla.cho_solve(cf, g, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            reg = 1e-12 * max(1.0, float(np.max(np.abs(np.diag(bhess)))))
            try:
                cf = sla.cho_factor(bhess + reg * np.eye(bhess.shape[0]), check_finite=False)
                dv = -sla.cho_solve(cf, g, check_finite=False)
            except (np.linalg.LinAlgError, ValueError):
                return v, "breakdown"
        if not np.all(np.isfinite(dv)):
            return v, "breakdown"
        dec2 = float(-g @ dv)
        if dec2 / 2.0 <= tol:
            return v, "centered"
        if not budget.take():
            return v, "budget"
        f0 = t * float(obj_grad @ v) + bval
        noise = 64.0 * np.finfo(float).eps * max(1.0, abs(f0))
        alpha = 1.0
        while True:
            cand = v + alpha * dv
            fc = t * float(obj_grad @ cand) + f_eval(cand)
            if math.isfinite(fc) and fc <= f0 - 0.25 * alpha * dec2:
                break
            alpha *= 0.5
            if alpha < 1e-14:
                return v, ("centered" if dec2 <= _LOOSE_DEC2 else "stalled")
        v = cand
        if dec2 <= _LOOSE_DEC2 and f0 - fc <= noise:
            # the decrement is below what round-off in t*c + grad lets us resolve
            return v, "centered"


def _initial_t(c: np.ndarray, grad: np.ndarray, hess: np.ndarray, fallback: float) -> float:
    try:
        cf = sla.cho_factor(hess, check_finite=False)
        hc = sla.cho_solve(cf, c, check_finite=False)
        hg = sla.cho_solve(cf, grad, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return fallback
    denom = float(c @ hc)
    if denom <= 0.0:
        return fallback
    t = -float(c @ hg) / denom
    return t if t > 1e-8 else fallback


class BarrierSolver:
    """Reference solver; single-threaded and reentrant."""

    name = "barrier"

    def solve(self, problem: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution:
        opts = opts or SolverOptions()
        p = problem.seal()
        n = p.nvars
        c_full = p.objective
        blocks = p.lmi_blocks
        E, f = p.equalities

        def fail(status: Status, msg: str, x=None, iters=0, phase1=math.nan) -> SdpSolution:
            x = np.full(n, math.nan) if x is None else x
            return _finish(p, status, x, iters, math.inf, phase1, msg)

        # 1. equality elimination
        try:
            x0, nsp = eliminate_equalities(E, f, opts.eq_rtol)
        except InconsistentEqualities as e:
            return fail(Status.INFEASIBLE, str(e))

        consts, coefs_y = reduced_blocks(blocks, x0, nsp, opts)
        c_y = nsp.T @ c_full

        # drop directions that no block sees
        if coefs_y and nsp.shape[1]:
            amat = np.vstack([a.reshape(a.shape[0], -1).T for a in coefs_y])
            _, sa, vta = np.linalg.svd(amat, full_matrices=True)
            r = int(np.sum(sa > 1e-12 * max(1.0, sa[0] if sa.size else 0.0)))
            basis = vta[:r].T
        else:
            basis = np.zeros((nsp.shape[1], 0))
        c_free = c_y - basis @ (basis.T @ c_y)
        # checked after phase I, so that an infeasible problem is reported as such
        unbounded = bool(np.linalg.norm(c_free) > 1e-9 * (1.0 + np.linalg.norm(c_y)))
        lift = nsp @ basis
        red = _Reduced(consts, [np.einsum("ik,ijl->kjl", basis, a, optimize=True) for a in coefs_y],
                       basis.T @ c_y, opts.radius)

        def to_x(z):
            return x0 + lift @ z

        budget = _Budget(opts.max_newton)
        z = np.zeros(red.m)

        if not blocks:
            if red.m or unbounded:
                return fail(Status.NUMERICAL_FAILURE, "unconstrained problem", to_x(z))
            return _finish(p, Status.OPTIMAL, to_x(z), 0, 0.0, math.nan, "no LMI blocks")

        # 2. phase I on (z, s)
        lam = max(float(np.linalg.eigvalsh(g)[-1]) for g in red.blocks_at(z))
        phase1 = lam
        if lam >= 0.0:
            s = lam + max(1.0, abs(lam))
            e_s = np.zeros(red.m + 1)
            e_s[-1] = 1.0

            def f1(v):
                return red.barrier(v[:-1], v[-1])

            def d1(v):
                return red.derivs(v[:-1], v[-1], with_shift=True)

            v = np.concatenate([z, [s]])
            _, g0, h0 = d1(v)
            t = _initial_t(e_s, g0, h0, 1.0)
            status = None
            for _ in range(opts.max_outer):
                v, why = _newton_center(e_s, t, v, f1, d1, budget, opts.center_tol,
                                        stop=lambda vv: vv[-1] < 0.0)
                phase1 = float(v[-1])
                if phase1 < 0.0:
                    break
                if why == "budget":
                    status = Status.MAX_ITER
                    break
                if why in ("breakdown", "stalled") and red.total_dim / t > 1e-9:
                    status = Status.NUMERICAL_FAILURE
                    break
                lower = phase1 - red.total_dim / t
                if lower > opts.feas_tol:
                    status = Status.INFEASIBLE
                    break
                if red.total_dim / t < 1e-10 * (1.0 + abs(phase1)) or why in ("breakdown", "stalled"):
                    status = Status.INFEASIBLE if phase1 > opts.feas_tol else Status.NUMERICAL_FAILURE
                    break
                t *= opts.t_factor
            else:
                status = Status.MAX_ITER
            if phase1 >= 0.0:
                msg = f"phase I optimum s* = {phase1:.3e}"
                if status is Status.NUMERICAL_FAILURE and phase1 <= opts.feas_tol:
                    msg += " (no strictly feasible point at the configured margin)"
                return fail(status or Status.NUMERICAL_FAILURE, msg, to_x(v[:-1]), budget.used, phase1)
            z = v[:-1]
        if unbounded:
            return fail(Status.NUMERICAL_FAILURE, "objective is unbounded along directions no LMI constrains",
                        iters=budget.used)

        # 3. phase II
        def f2(zz):
            return red.barrier(zz)

        def d2(zz):
            return red.derivs(zz)

        _, g0, h0 = d2(z)
        t = _initial_t(red.c, g0, h0, 1.0)
        gap = math.inf
        status = Status.MAX_ITER
        why = ""
        for outer in range(opts.max_outer):
            z, why = _newton_center(red.c, t, z, f2, d2, budget, opts.center_tol)
            if not np.all(np.isfinite(z)):
                status = Status.NUMERICAL_FAILURE
                break
            obj = float(red.c @ z)
            gap = red.total_dim / t
            if why == "budget":
                status = Status.MAX_ITER
                break
            if gap <= opts.gap_rtol * (1.0 + abs(obj)):
                status = Status.OPTIMAL
                break
            if why in ("breakdown", "stalled"):
                # near the optimum numerical breakdown costs little accuracy
                status = Status.OPTIMAL if gap <= 1e-5 * (1.0 + abs(obj)) else Status.NUMERICAL_FAILURE
                break
            t *= opts.t_factor
        if status is Status.OPTIMAL and float(z @ z) > 0.98 * red.r2:
            status, why = Status.NUMERICAL_FAILURE, "feasibility radius is active (unbounded or badly scaled problem)"
        log.debug("barrier solve %s: %s after %d Newton steps, gap %.2e", p.name, status.value, budget.used, gap)
        return _finish(p, status, to_x(z), budget.used, gap, phase1, why)


def _finish(p: SdpProblem, status: Status, x: np.ndarray, iters: int, gap: float,
            phase1: float, msg: str) -> SdpSolution:
    if np.all(np.isfinite(x)):
        eigs = {b.name: float(np.linalg.eigvalsh(b.value(x))[-1]) for b in p.lmi_blocks}
        worst = max(eigs.values()) if eigs else -math.inf
        obj = float(p.objective @ x) + p.objective_offset
    else:
        eigs, worst, obj = {}, math.nan, math.nan
    if status is Status.OPTIMAL and not worst <= 1e-7:
        status, msg = Status.NUMERICAL_FAILURE, f"constraint violation {worst:.3e} at the returned point"
    return SdpSolution(status, x, obj, worst, iters, gap, phase1, msg, eigs)


_SOLVERS: dict[str, Callable[[], Solver]] = {"barrier": BarrierSolver}


def register_solver(name: str, factory: Callable[[], Solver]) -> None:
    _SOLVERS[name] = factory


def get_solver(name: str = "barrier") -> Solver:
    try:
        return _SOLVERS[name]()
    except KeyError:
        raise ValueError(f"unknown SDP solver {name!r}; available: {sorted(_SOLVERS)}") from None


def solve(problem: SdpProblem, opts: SolverOptions | None = None, solver: str | Solver = "barrier") -> SdpSolution:
    backend = get_solver(solver) if isinstance(solver, str) else solver
    return backend.solve(problem, opts)
