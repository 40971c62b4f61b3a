"""Monte Carlo closed-loop simulation of ``u = -K y`` under sampled uncertainty.

Runs are stepped together as a batch.  Run ``i`` draws its initial state
and its whole uncertainty sequence from its own generator seeded by
``SeedSequence(seed, spawn_key=(i,))``, so per-run results do not depend on
how many runs are simulated or in which order.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .model import CostFunctional, DimensionError, UncertainSystem, close_loop, sample_delta_batch

DIVERGENCE_LIMIT = 1e100
BOUND_RTOL = 1e-6
BOUND_ATOL = 1e-9
LYAP_TOL = 1e-7


@dataclass(frozen=True)
class StandardGaussian:
    pass


@dataclass(frozen=True, eq=False)
class FixedVector:
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).ravel())


@dataclass(frozen=True, eq=False)
class SimConfig:
    runs: int = 5000
    horizon: int = 200
    seed: int = 0
    x0_mode: StandardGaussian | FixedVector = field(default_factory=StandardGaussian)
    record_trajectories: bool = False

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class Trajectories:
    x: np.ndarray        # (runs, horizon + 1, nx)
    u: np.ndarray        # (runs, horizon, nu)
    stage: np.ndarray    # (runs, horizon)


@dataclass(frozen=True, eq=False)
class SimulationReport:
    effective_cost: float
    ci95_halfwidth: float
    per_run_costs: np.ndarray
    x0: np.ndarray
    diverged: int
    bound_violations: int | None
    lyapunov_violations: int | None
    max_state_norm: float
    trajectories: Trajectories | None = None

    @property
    def runs(self) -> int:
        return self.per_run_costs.size


@dataclass(frozen=True)
class BoundCheck:
    runs: int
    violations: int
    worst_ratio: float       # max_i J_i / (x0_i' P x0_i)


def _run_rngs(seed: int, runs: int) -> list[np.random.Generator]:
    return [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,))) for i in range(runs)]


def _draw(sys: UncertainSystem, cfg: SimConfig):
    nx = sys.nx
    if isinstance(cfg.x0_mode, FixedVector):
        if cfg.x0_mode.v.shape != (nx,):
            raise DimensionError(f"fixed x0 has {cfg.x0_mode.v.size} entries, expected {nx}")
    x0 = np.empty((cfg.runs, nx))
    deltas = [np.empty((cfg.runs, cfg.horizon, b.rows, b.cols)) for b in sys.structure]
    for i, rng in enumerate(_run_rngs(cfg.seed, cfg.runs)):
        if isinstance(cfg.x0_mode, FixedVector):
            x0[i] = cfg.x0_mode.v
        else:
            x0[i] = rng.standard_normal(nx)
        for store, d in zip(deltas, sample_delta_batch(sys.structure, rng, cfg.horizon)):
            store[i] = d
    return x0, deltas


def _expand(sys: UncertainSystem, deltas: list[np.ndarray], k: int) -> np.ndarray:
    """Block-diagonal ``Delta_k`` for every run: ``(runs, n_p, n_q)``."""
    runs = deltas[0].shape[0]
    out = np.zeros((runs, sys.n_p, sys.n_q))
    r = c = 0
    for b, d in zip(sys.structure, deltas):
        blk = d[:, k]
        for _ in range(b.repeats):
            out[:, r:r + b.rows, c:c + b.cols] = blk
            r += b.rows
            c += b.cols
    return out


def _kahan_add(total: np.ndarray, comp: np.ndarray, value: np.ndarray) -> None:
    y = value - comp
    t = total + y
    comp[...] = (t - total) - y
    total[...] = t


def run(sys: UncertainSystem, cost: CostFunctional, k, cfg: SimConfig | None = None,
        certificate: np.ndarray | None = None) -> SimulationReport:
    cfg = cfg or SimConfig()
    k = linalg.as_mat(k, "K")
    if k.shape != (sys.nu, sys.ny):
        raise DimensionError(f"K: expected shape {(sys.nu, sys.ny)}, got {k.shape}")
    p = None
    if certificate is not None:
        p = linalg.as_sym(certificate, "P")
        if p.shape != (sys.nx, sys.nx):
            raise DimensionError(f"certificate: expected {sys.nx}x{sys.nx}, got {p.shape}")
    cl = close_loop(sys, cost, k)
    x0, deltas = _draw(sys, cfg)
    runs, horizon = cfg.runs, cfg.horizon

    x = x0.copy()
    alive = np.ones(runs, dtype=bool)
    total = np.zeros(runs)
    comp = np.zeros(runs)
    max_norm = np.linalg.norm(x, axis=1)
    lyap_viol = 0
    rec = None
    if cfg.record_trajectories:
        rec = Trajectories(np.full((runs, horizon + 1, sys.nx), np.nan),
                           np.full((runs, horizon, sys.nu), np.nan), np.full((runs, horizon), np.nan))
        rec.x[:, 0] = x
    eye_q = np.eye(sys.n_q)
    loop_free = not np.any(cl.dzwbar)

    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(horizon):
            if sys.n_p:
                dk = _expand(sys, deltas, step)
                zc = x @ cl.czbar.T
                if loop_free:
                    w = np.einsum("rpq,rq->rp", dk, zc)
                else:
                    # w = Delta (I - Dzw_bar Delta)^-1 Cz_bar x
                    m = eye_q - np.einsum("qp,rpj->rqj", cl.dzwbar, dk)
                    w = np.einsum("rpq,rq->rp", dk, np.linalg.solve(m, zc[..., None])[..., 0])
                y = x @ sys.cy.T + w @ sys.dyw.T
                x_next = x @ sys.a.T + w @ sys.bw.T
            else:
                y = x @ sys.cy.T
                x_next = x @ sys.a.T
            u = -(y @ k.T)
            x_next = x_next + u @ sys.bu.T
            stage = (np.einsum("ri,ij,rj->r", x, cost.q, x) + 2.0 * np.einsum("ri,ij,rj->r", x, cost.n, u)
                     + np.einsum("ri,ij,rj->r", u, cost.r, u))
            if p is not None:
                dv = np.einsum("ri,ij,rj->r", x_next, p, x_next) - np.einsum("ri,ij,rj->r", x, p, x)
                tol = LYAP_TOL * (1.0 + np.einsum("ri,ri->r", x, x))
                lyap_viol += int(np.count_nonzero(alive & (dv > -stage + tol)))
            _kahan_add(total, comp, np.where(alive, stage, 0.0))
            if rec is not None:
                rec.u[:, step] = u
                rec.stage[:, step] = stage
                rec.x[:, step + 1] = x_next
            norms = np.linalg.norm(x_next, axis=1)
            bad = alive & ~(np.isfinite(norms) & (norms < DIVERGENCE_LIMIT) & np.isfinite(total))
            alive &= ~bad
            max_norm = np.where(bad, np.inf, np.maximum(max_norm, np.where(alive, norms, 0.0)))
            x = np.where(alive[:, None], x_next, 0.0)

    costs = np.where(alive, total, np.inf)
    finite = costs[alive]
    mean = float(np.mean(finite)) if finite.size else math.nan
    half = float(1.96 * np.std(finite, ddof=1) / math.sqrt(finite.size)) if finite.size > 1 else math.nan
    bound_viol = None
    if p is not None:
        bound_viol = check_bound_costs(costs, x0, p).violations
    return SimulationReport(
        effective_cost=mean, ci95_halfwidth=half, per_run_costs=costs, x0=x0,
        diverged=int(runs - np.count_nonzero(alive)), bound_violations=bound_viol,
        lyapunov_violations=lyap_viol if p is not None else None,
        max_state_norm=float(np.max(max_norm)), trajectories=rec)


def check_bound_costs(costs: np.ndarray, x0: np.ndarray, p: np.ndarray) -> BoundCheck:
    bound = np.einsum("ri,ij,rj->r", x0, p, x0)
    limit = bound * (1.0 + BOUND_RTOL) + BOUND_ATOL
    viol = ~(costs <= limit)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0.0, costs / bound, np.where(costs > 0.0, np.inf, 0.0))
    worst = float(np.max(ratio)) if ratio.size else 0.0
    return BoundCheck(runs=costs.size, violations=int(np.count_nonzero(viol)), worst_ratio=worst)


def check_bound(report: SimulationReport, p, x0_samples: np.ndarray | None = None) -> BoundCheck:
    """Count runs whose cost exceeds ``x0' P x0 (1 + 1e-6) + 1e-9``."""
    p = linalg.as_sym(p, "P")
    x0 = report.x0 if x0_samples is None else np.atleast_2d(np.asarray(x0_samples, dtype=float))
    return check_bound_costs(report.per_run_costs, x0, p)


def write_trajectories(report: SimulationReport, directory: str, prefix: str = "run") -> list[str]:
    """One CSV per run with columns ``k, x_1..x_n, u_1..u_m, stage_cost``."""
    tr = report.trajectories
    if tr is None:
        raise ValueError("trajectories were not recorded (set record_trajectories)")
    os.makedirs(directory, exist_ok=True)
    runs, h1, nx = tr.x.shape
    nu = tr.u.shape[2]
    header = ["k"] + [f"x_{i + 1}" for i in range(nx)] + [f"u_{i + 1}" for i in range(nu)] + ["stage_cost"]
    width = len(str(runs - 1))
    paths = []
    for r in range(runs):
        path = os.path.join(directory, f"{prefix}_{r:0{width}d}.csv")
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for step in range(h1):
                u = tr.u[r, step] if step < h1 - 1 else np.full(nu, np.nan)
                s = tr.stage[r, step] if step < h1 - 1 else math.nan
                wr.writerow([step] + [repr(float(v)) for v in tr.x[r, step]]
                            + [repr(float(v)) for v in u] + [repr(float(s))])
        paths.append(path)
    return paths
