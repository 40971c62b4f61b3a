"""Controller synthesis and certification.

* ``lqr``: nominal discrete Riccati fixed point (state feedback only).
* ``synth_lemma``: guaranteed-cost output feedback when ``Dyw = 0``.
* ``synth_dilated``: the dilated-variable condition, which also covers
  ``Dyw != 0`` provided ``Dyw * Delta_bar * Dzu`` vanishes.
* ``certify``: minimal-trace ``P`` and multipliers for a fixed gain.

The synthesis problems use the inverse multipliers ``Upsilon_i`` and
``X = P^-1`` as decision variables and minimize ``tr(Z)`` with
``[[-Z, I], [I, -X]] <= 0``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg, model
from .model import (CostFunctional, DimensionError, UncertainSystem, UncertaintyBlock,
                    close_loop)
from .multiplier import MultiplierSet
from .sdp import (Affine, SdpProblem, SdpSolution, SolverOptions, Status, block_diag, bmat,
                  kron_eye, solve, trace)

COND_LIMIT = 1e10
DARE_TOL = 1e-12
DARE_MAX_ITER = 100_000


class Method(str, enum.Enum):
    LQR = "Lqr"
    GCC_LEMMA = "GccLemma"
    GCC_DILATED = "GccDilated"


class SynthesisError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


class NoControllerError(SynthesisError):
    """The synthesis SDP has no (strictly) feasible point or the solve failed."""

    def __init__(self, message: str, solution: SdpSolution | None = None):
        super().__init__(message)
        self.solution = solution


class ConditioningError(SynthesisError):
    pass


@dataclass(frozen=True, eq=False)
class DilatedVariables:
    v_full: np.ndarray
    v44: np.ndarray
    v45: np.ndarray
    v54: np.ndarray
    v55: np.ndarray
    vbar: np.ndarray
    y: np.ndarray


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    k: np.ndarray
    p: np.ndarray
    x_inv: np.ndarray
    multipliers: MultiplierSet | None
    synthesis_cost: float
    method: Method
    structured: bool
    solver: SdpSolution | None = None
    objective: float = math.nan          # tr(Z) at the SDP optimum
    dilated: DilatedVariables | None = None

    @property
    def lambdas(self) -> MultiplierSet | None:
        """``Lambda_i = Upsilon_i^-1``."""
        return None if self.multipliers is None else self.multipliers.inverse()


@dataclass(frozen=True, eq=False)
class Certificate:
    certified: bool
    p: np.ndarray | None
    multipliers: MultiplierSet | None
    bound: float
    solver: SdpSolution
    message: str = ""


# -- LQR ----------------------------------------------------------------

def lqr(sys: UncertainSystem, cost: CostFunctional, tol: float = DARE_TOL,
        max_iter: int = DARE_MAX_ITER) -> SynthesisResult:
    """Value iteration on the Riccati map from ``P0 = Q``; uncertainty is ignored."""
    if not (sys.cy.shape == (sys.nx, sys.nx) and np.array_equal(sys.cy, np.eye(sys.nx))):
        raise PreconditionError("LQR needs full state measurement (Cy = I)")
    a, b, q, n, r = sys.a, sys.bu, cost.q, cost.n, cost.r
    p = q.copy()
    for _ in range(max_iter):
        g = b.T @ p @ a + n.T
        nxt = linalg.sym(a.T @ p @ a - g.T @ np.linalg.solve(r + b.T @ p @ b, g) + q)
        if not np.all(np.isfinite(nxt)):
            raise SynthesisError("Riccati iteration diverged")
        diff = np.linalg.norm(nxt - p, np.inf)
        p = nxt
        if diff < tol:
            break
    else:
        raise SynthesisError(f"Riccati iteration did not converge in {max_iter} steps")
    k = np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a + n.T)
    return SynthesisResult(k=k, p=p, x_inv=np.linalg.inv(p), multipliers=None,
                           synthesis_cost=float(np.trace(p)), method=Method.LQR, structured=False,
                           objective=float(np.trace(p)))


# -- shared pieces --------------------------------------------------------

def _multiplier_vars(prob: SdpProblem, structure, strict_pos: bool, name: str):
    blocks = [prob.add_sym_var(b.repeats, f"{name}{i + 1}") for i, b in enumerate(structure)]
    for i, u in enumerate(blocks):
        prob.add_psd(u, strict=strict_pos, name=f"{name}{i + 1}>=0")
    if not blocks:
        z = Affine(np.zeros((0, 0)))
        return blocks, z, z
    up = block_diag(*[kron_eye(u, b.rows) for u, b in zip(blocks, structure)])
    uq = block_diag(*[kron_eye(u, b.cols) for u, b in zip(blocks, structure)])
    return blocks, up, uq


def _structure_for(sys: UncertainSystem, structured: bool) -> UncertainSystem:
    if structured or sys.n_p == 0:
        return sys
    return sys.unstructured()


def _schur_trace(prob: SdpProblem, x: Affine, nx: int) -> Affine:
    z = prob.add_sym_var(nx, "Z")
    prob.add_lmi(bmat([[-z, np.eye(nx)], [np.eye(nx), -x]]), strict=False, name="schur")
    prob.minimize(trace(z))
    return z


def _check_solution(sol: SdpSolution, what: str) -> None:
    if sol.status is not Status.OPTIMAL:
        raise NoControllerError(f"{what}: solver returned {sol.status.value} ({sol.message})", sol)


def _finish(prob: SdpProblem, sol: SdpSolution, x: Affine, ups, structure, k: np.ndarray,
            method: Method, structured: bool, dilated: DilatedVariables | None = None) -> SynthesisResult:
    xv = linalg.sym(x.value(sol.x))
    if linalg.min_eig(xv) <= 0.0:
        raise NoControllerError("returned X is not positive definite", sol)
    p = linalg.sym(np.linalg.inv(xv))
    mult = None
    if structure:
        mult = MultiplierSet(tuple(linalg.sym(u.value(sol.x)) for u in ups), tuple(structure))
    return SynthesisResult(k=k, p=p, x_inv=xv, multipliers=mult, synthesis_cost=float(np.trace(p)),
                           method=method, structured=structured, solver=sol,
                           objective=sol.objective_value, dilated=dilated)


def _psd_part(m: np.ndarray) -> np.ndarray:
    # Lambda_i >= 0 is a closed constraint; drop round-off below zero
    w, q = np.linalg.eigh(linalg.sym(m))
    return linalg.sym((q * np.clip(w, 0.0, None)) @ q.T)


def _checked_inverse(m: np.ndarray, what: str) -> np.ndarray:
    c = np.linalg.cond(m)
    if not c <= COND_LIMIT:
        raise ConditioningError(f"{what} is ill conditioned (cond = {c:.3e}); gain recovery rejected")
    return np.linalg.inv(m)


# -- Lemma-based synthesis (Dyw = 0) -------------------------------------

def build_lemma_problem(sys: UncertainSystem, cost: CostFunctional):
    nx, nu, ny, n_p, n_q, nc = sys.nx, sys.nu, sys.ny, sys.n_p, sys.n_q, cost.nc
    prob = SdpProblem("gcc-lemma")
    x = prob.add_sym_var(nx, "X")
    prob.add_psd(x, strict=True, name="X>0")
    ups, up, uq = _multiplier_vars(prob, sys.structure, True, "U")
    xbar = prob.add_mat_var(ny, ny, "Xbar")
    y = prob.add_mat_var(nu, ny, "Y")
    prob.add_eq(xbar @ sys.cy, sys.cy @ x)

    czx = sys.cz @ x - sys.dzu @ y @ sys.cy
    ccx = cost.cc @ x - cost.dcu @ y @ sys.cy
    ax = sys.a @ x - sys.bu @ y @ sys.cy
    zr = np.zeros
    lmi = bmat([
        [-uq, zr((n_q, nc)), zr((n_q, nx)), czx, sys.dzw @ up],
        [zr((nc, n_q)), -np.eye(nc), zr((nc, nx)), ccx, zr((nc, n_p))],
        [zr((nx, n_q)), zr((nx, nc)), -x, ax, sys.bw @ up],
        [czx.T, ccx.T, ax.T, -x, zr((nx, n_p))],
        [(sys.dzw @ up).T, zr((n_p, nc)), (sys.bw @ up).T, zr((n_p, nx)), -up],
    ])
    prob.add_lmi(lmi, strict=True, name="gcc")
    _schur_trace(prob, x, nx)
    return prob, dict(x=x, ups=ups, xbar=xbar, y=y)


def synth_lemma(sys: UncertainSystem, cost: CostFunctional, structured: bool = True,
                opts: SolverOptions | None = None, solver="barrier") -> SynthesisResult:
    if np.any(sys.dyw != 0.0):
        raise PreconditionError("the Lemma-based synthesis requires Dyw = 0; use the dilated method")
    model.validate(sys, cost)
    work = _structure_for(sys, structured)
    prob, v = build_lemma_problem(work, cost)
    sol = solve(prob, opts, solver)
    _check_solution(sol, "gcc-lemma")
    xv = linalg.sym(v["x"].value(sol.x))
    cy_pinv = linalg.pinv(sys.cy)
    # Cy X Cy^+ is singular when n_y > rank(Cy); completing it on the left null
    # space of Cy keeps Xbar Cy = Cy X and leaves full-row-rank Cy unchanged
    cxc = sys.cy @ xv @ cy_pinv + (np.eye(sys.ny) - sys.cy @ cy_pinv)
    k = v["y"].value(sol.x) @ _checked_inverse(cxc, "Cy X Cy^+")
    return _finish(prob, sol, v["x"], v["ups"], work.structure, k, Method.GCC_LEMMA, structured)


# -- dilated synthesis -----------------------------------------------------

def build_dilated_problem(sys: UncertainSystem, cost: CostFunctional, flipped_sign: bool = False):
    """Dilated LMI with ``N_bar = M S V`` (``flipped_sign`` flips the sign of the ``V_i4, V_i5`` terms)."""
    nx, nu, ny, n_p, n_q, nc = sys.nx, sys.nu, sys.ny, sys.n_p, sys.n_q, cost.nc
    prob = SdpProblem("gcc-dilated")
    x = prob.add_sym_var(nx, "X")
    prob.add_psd(x, strict=True, name="X>0")
    ups, up, uq = _multiplier_vars(prob, sys.structure, True, "U")
    y = prob.add_mat_var(nu, ny, "Y")
    vbar = prob.add_mat_var(ny, ny, "Vbar")
    top = n_q + nc + nx          # rows 1..3 of V
    bot = nx + n_p               # rows/columns 4..5
    n = top + bot
    vtop = prob.add_mat_var(top, n, "V")
    vbot = prob.add_mat_var(bot, bot, "Vb")
    v = bmat([[vtop], [bmat([[np.zeros((bot, top)), vbot]])]])

    cy_dyw = np.hstack([sys.cy, sys.dyw])
    prob.add_eq(vbar @ cy_dyw, cy_dyw @ vbot)

    plant = np.block([[sys.cz, sys.dzw], [cost.cc, np.zeros((nc, n_p))], [sys.a, sys.bw]])
    inputs = np.vstack([sys.dzu, cost.dcu, sys.bu])
    sign = 1.0 if flipped_sign else -1.0
    phi_sigma = 2.0 * (plant @ vbot) - 2.0 * (inputs @ y @ cy_dyw) + sign * vtop[:, top:]
    nbar = 0.5 * bmat([
        [-vtop[:, :top], phi_sigma],
        [np.zeros((bot, top)), -vbot],
    ])
    m = block_diag(uq, np.eye(nc), x, x, up)
    lmi = bmat([
        [-m, np.zeros((n, n)), v],
        [np.zeros((n, n)), -m, nbar + m],
        [v.T, (nbar + m).T, -(v + v.T)],
    ])
    prob.add_lmi(lmi, strict=True, name="gcc-dilated")
    _schur_trace(prob, x, nx)
    return prob, dict(x=x, ups=ups, y=y, vbar=vbar, vtop=vtop, vbot=vbot, v=v)


def synth_dilated(sys: UncertainSystem, cost: CostFunctional, structured: bool = True,
                  flipped_sign: bool = False, opts: SolverOptions | None = None,
                  solver="barrier") -> SynthesisResult:
    work = _structure_for(sys, structured)
    rep = model.validate(work, cost)
    if not rep.feedthrough_zero:
        raise PreconditionError(
            "Dyw * Delta_bar * Dzu is not identically zero for this uncertainty structure; "
            "the dilated synthesis does not apply")
    prob, v = build_dilated_problem(work, cost, flipped_sign)
    sol = solve(prob, opts, solver)
    _check_solution(sol, "gcc-dilated")
    vbar = v["vbar"].value(sol.x)
    yv = v["y"].value(sol.x)
    k = yv @ _checked_inverse(vbar, "Vbar")
    vb = v["vbot"].value(sol.x)
    nx = sys.nx
    dil = DilatedVariables(v_full=v["v"].value(sol.x), v44=vb[:nx, :nx], v45=vb[:nx, nx:],
                           v54=vb[nx:, :nx], v55=vb[nx:, nx:], vbar=vbar, y=yv)
    return _finish(prob, sol, v["x"], v["ups"], work.structure, k, Method.GCC_DILATED, structured, dil)


# -- analysis ----------------------------------------------------------------

def build_analysis_lmi(cl: model.ClosedLoop, structure, strict_p: bool = True):
    """Variables ``P`` and ``Lambda_i``; the robust dissipation LMI for a fixed closed loop."""
    structure = tuple(structure)
    nx = cl.abar.shape[0]
    n_q, n_p = cl.dzwbar.shape
    prob = SdpProblem("certify")
    p = prob.add_sym_var(nx, "P")
    prob.add_psd(p, strict=strict_p, name="P>0")
    lams, lp, lq = _multiplier_vars(prob, structure, False, "L")
    ab, bw = cl.abar, cl.bwbar
    theta = bmat([
        [ab.T @ p @ ab - p, ab.T @ p @ bw],
        [bw.T @ p @ ab, bw.T @ p @ bw],
    ])
    cost_part = np.block([[cl.ccbar.T @ cl.ccbar, cl.ccbar.T @ cl.dcwbar],
                          [cl.dcwbar.T @ cl.ccbar, cl.dcwbar.T @ cl.dcwbar]])
    if n_p:
        czb, dzb = cl.czbar, cl.dzwbar
        s = bmat([
            [-(czb.T @ lq @ czb), -(czb.T @ lq @ dzb)],
            [-(dzb.T @ lq @ czb), lp - dzb.T @ lq @ dzb],
        ])
        lmi = theta + cost_part - s
    else:
        lmi = theta + cost_part
    prob.add_lmi(lmi, strict=True, name="dissipation")
    prob.minimize(trace(p))
    return prob, dict(p=p, lams=lams)


def certify(sys: UncertainSystem, cost: CostFunctional, k, opts: SolverOptions | None = None,
            solver="barrier") -> Certificate:
    k = linalg.as_mat(k, "K")
    if k.shape != (sys.nu, sys.ny):
        raise DimensionError(f"K: expected shape {(sys.nu, sys.ny)}, got {k.shape}")
    cl = close_loop(sys, cost, k)
    prob, v = build_analysis_lmi(cl, sys.structure)
    sol = solve(prob, opts, solver)
    if sol.status is not Status.OPTIMAL:
        msg = f"not certifiable: solver returned {sol.status.value} ({sol.message})"
        return Certificate(False, None, None, math.inf, sol, msg)
    p = linalg.sym(v["p"].value(sol.x))
    mult = None
    if sys.structure:
        mult = MultiplierSet(tuple(_psd_part(l.value(sol.x)) for l in v["lams"]), sys.structure)
    return Certificate(True, p, mult, float(np.trace(p)), sol)
