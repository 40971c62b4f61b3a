"""Uncertain plant, quadratic cost, closed loops and admissible uncertainty.

The plant is written in feedback-disturbance form::

    x+ = A x + Bw w + Bu u
    y  = Cy x + Dyw w
    z  = Cz x + Dzw w + Dzu u,      w = Delta z

with ``Delta = diag(I_r1 (x) Delta_1, ..., I_rs (x) Delta_s)`` and every
``||Delta_i||_2 <= 1``.  The controller is ``u = -K y``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import linalg

COND_LIMIT = 1e12


class DimensionError(ValueError):
    pass


class WellPosednessError(ValueError):
    pass


class SingularityError(ArithmeticError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class UncertaintyBlock:
    """``repeats`` copies of a ``rows x cols`` norm-bounded block."""

    repeats: int = 1
    rows: int = 1
    cols: int = 1

    def __post_init__(self):
        for name in ("repeats", "rows", "cols"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"UncertaintyBlock.{name} must be a positive integer, got {v!r}")

    @property
    def np(self) -> int:
        return self.repeats * self.rows

    @property
    def nq(self) -> int:
        return self.repeats * self.cols


def scalar_blocks(count: int) -> tuple[UncertaintyBlock, ...]:
    return tuple(UncertaintyBlock(1, 1, 1) for _ in range(count))


def structure_dims(structure: Sequence[UncertaintyBlock]) -> tuple[int, int]:
    return sum(b.np for b in structure), sum(b.nq for b in structure)


@dataclass(frozen=True, eq=False)
class UncertainSystem:
    a: np.ndarray
    bu: np.ndarray
    bw: np.ndarray
    cy: np.ndarray
    dyw: np.ndarray
    cz: np.ndarray
    dzu: np.ndarray
    dzw: np.ndarray
    structure: tuple[UncertaintyBlock, ...] = ()

    def __post_init__(self):
        a = linalg.as_mat(self.a, "A")
        bu = linalg.as_mat(self.bu, "Bu")
        cy = linalg.as_mat(self.cy, "Cy")
        nx, nu, ny = a.shape[0], bu.shape[1], cy.shape[0]
        structure = tuple(self.structure)
        n_p, n_q = structure_dims(structure)

        def chan(value, name, shape):
            m = np.array(value, dtype=float)
            if m.size == 0:
                m = m.reshape(shape)
            m = linalg.as_mat(m, name, allow_empty=True)
            if m.shape != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {m.shape}")
            return m

        if a.shape != (nx, nx):
            raise DimensionError(f"A: expected a square matrix, got {a.shape}")
        if bu.shape[0] != nx:
            raise DimensionError(f"Bu: expected {nx} rows, got {bu.shape[0]}")
        if cy.shape[1] != nx:
            raise DimensionError(f"Cy: expected {nx} columns, got {cy.shape[1]}")
        bw = np.array(self.bw, dtype=float)
        cz = np.array(self.cz, dtype=float)
        if bw.size and bw.ndim == 2 and bw.shape[1] != n_p:
            raise DimensionError(
                f"Bw has {bw.shape[1]} columns but the uncertainty structure gives "
                f"n_p = sum(repeats * rows) = {n_p}")
        if cz.size and cz.ndim == 2 and cz.shape[0] != n_q:
            raise DimensionError(
                f"Cz has {cz.shape[0]} rows but the uncertainty structure gives "
                f"n_q = sum(repeats * cols) = {n_q}")
        values = dict(
            a=a, bu=bu, cy=cy,
            bw=chan(self.bw, "Bw", (nx, n_p)),
            dyw=chan(self.dyw, "Dyw", (ny, n_p)),
            cz=chan(self.cz, "Cz", (n_q, nx)),
            dzu=chan(self.dzu, "Dzu", (n_q, nu)),
            dzw=chan(self.dzw, "Dzw", (n_q, n_p)),
        )
        for k, v in values.items():
            object.__setattr__(self, k, _frozen(v))
        object.__setattr__(self, "structure", structure)

    @property
    def nx(self) -> int:
        return self.a.shape[0]

    @property
    def nu(self) -> int:
        return self.bu.shape[1]

    @property
    def ny(self) -> int:
        return self.cy.shape[0]

    @property
    def n_p(self) -> int:
        return self.bw.shape[1]

    @property
    def n_q(self) -> int:
        return self.cz.shape[0]

    @property
    def state_feedback(self) -> bool:
        return self.ny == self.nx and np.array_equal(self.cy, np.eye(self.nx)) and not np.any(self.dyw)

    def replace(self, **changes) -> "UncertainSystem":
        fields = {k: getattr(self, k) for k in
                  ("a", "bu", "bw", "cy", "dyw", "cz", "dzu", "dzw", "structure")}
        fields.update(changes)
        return UncertainSystem(**fields)

    def with_structure(self, structure: Sequence[UncertaintyBlock]) -> "UncertainSystem":
        return self.replace(structure=tuple(structure))

    def unstructured(self) -> "UncertainSystem":
        """Same channels, but Delta treated as one full ``n_p x n_q`` block."""
        if self.n_p == 0:
            return self
        return self.with_structure((UncertaintyBlock(1, self.n_p, self.n_q),))

    def without_uncertainty(self) -> "UncertainSystem":
        """Zero the uncertainty channels (``Bw``, ``Dyw``, ``Cz``, ``Dzu``, ``Dzw``)."""
        return self.replace(bw=np.zeros_like(self.bw), dyw=np.zeros_like(self.dyw),
                            cz=np.zeros_like(self.cz), dzu=np.zeros_like(self.dzu),
                            dzw=np.zeros_like(self.dzw))

    def nominal(self) -> "UncertainSystem":
        """Drop the uncertainty entirely (empty structure, ``n_p = n_q = 0``)."""
        nx, nu, ny = self.nx, self.nu, self.ny
        return UncertainSystem(self.a, self.bu, np.zeros((nx, 0)), self.cy, np.zeros((ny, 0)),
                               np.zeros((0, nx)), np.zeros((0, nu)), np.zeros((0, 0)), ())


@dataclass(frozen=True, eq=False)
class CostFunctional:
    """Stage cost ``x'Qx + 2x'Nu + u'Ru`` and a factor ``[Cc Dcu]``."""

    q: np.ndarray
    n: np.ndarray
    r: np.ndarray
    cc: np.ndarray
    dcu: np.ndarray

    def __post_init__(self):
        q = linalg.as_sym(self.q, "Q")
        r = linalg.as_sym(self.r, "R")
        n = linalg.as_mat(self.n, "N")
        cc = linalg.as_mat(self.cc, "Cc")
        dcu = linalg.as_mat(self.dcu, "Dcu")
        nx, nu = q.shape[0], r.shape[0]
        if n.shape != (nx, nu):
            raise DimensionError(f"N: expected shape {(nx, nu)}, got {n.shape}")
        if cc.shape[1] != nx or dcu.shape != (cc.shape[0], nu):
            raise DimensionError("Cc/Dcu: inconsistent factor shapes")
        if linalg.min_eig(r) <= 0.0:
            raise ValueError("R must be positive definite")
        if linalg.min_eig(q) < -linalg.psd_tol(q):
            raise ValueError("Q must be positive semidefinite")
        w = np.block([[q, n], [n.T, r]])
        f = np.hstack([cc, dcu])
        if np.max(np.abs(f.T @ f - w)) > 1e-8 * (1.0 + np.max(np.abs(w))):
            raise ValueError("[Cc Dcu]^T [Cc Dcu] does not reproduce [[Q, N], [N^T, R]]")
        for k, v in dict(q=q, n=n, r=r, cc=cc, dcu=dcu).items():
            object.__setattr__(self, k, _frozen(v))

    @classmethod
    def from_weights(cls, q, r, n=None) -> "CostFunctional":
        q = linalg.as_sym(q, "Q")
        r = linalg.as_sym(r, "R")
        n = np.zeros((q.shape[0], r.shape[0])) if n is None else linalg.as_mat(n, "N")
        if n.shape != (q.shape[0], r.shape[0]):
            raise DimensionError(f"N: expected shape {(q.shape[0], r.shape[0])}, got {n.shape}")
        w = np.block([[q, n], [n.T, r]])
        f = linalg.psd_factor(w)
        nx = q.shape[0]
        return cls(q, n, r, f[:, :nx], f[:, nx:])

    @property
    def nc(self) -> int:
        return self.cc.shape[0]


@dataclass(frozen=True, eq=False)
class DeltaRealization:
    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(np.atleast_2d(np.asarray(b, dtype=float)) for b in self.blocks))


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    abar: np.ndarray
    bwbar: np.ndarray
    czbar: np.ndarray
    dzwbar: np.ndarray
    ccbar: np.ndarray
    dcwbar: np.ndarray
    k: np.ndarray


@dataclass
class ValidationReport:
    dzw_norm: float
    well_posed: bool
    stabilizable: bool
    observable: bool
    feedthrough_zero: bool
    feedthrough_max: float
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.well_posed and self.feedthrough_zero


def _pbh_rank_ok(a: np.ndarray, other: np.ndarray, stacked_rows: bool, only_unstable: bool) -> bool:
    n = a.shape[0]
    for lam in np.linalg.eigvals(a):
        if only_unstable and abs(lam) < 1.0:
            continue
        shifted = a - lam * np.eye(n)
        m = np.vstack([shifted, other]) if stacked_rows else np.hstack([shifted, other])
        s = np.linalg.svd(m, compute_uv=False)
        if s.size < n or s[n - 1] <= 1e-10 * max(1.0, s[0]):
            return False
    return True


def _delta_pattern(structure: Sequence[UncertaintyBlock]) -> np.ndarray:
    ones = [linalg.kron(np.eye(b.repeats), np.ones((b.rows, b.cols))) for b in structure]
    return linalg.block_diag(*ones) if ones else np.zeros((0, 0))


def validate(sys: UncertainSystem, cost: CostFunctional, samples: int = 100,
             seed: int = 0, strict: bool = True) -> ValidationReport:
    """Check well-posedness, nominal stabilizability/observability and feed-through.

    A well-posedness violation (``||Dzw||_2 >= 1``) raises unless ``strict``
    is false.  Stabilizability and observability are only checked at
    ``Delta = 0`` and produce warnings.
    """
    if cost.q.shape[0] != sys.nx or cost.r.shape[0] != sys.nu:
        raise DimensionError(
            f"cost weights are {cost.q.shape[0]}x{cost.r.shape[0]} but the system has "
            f"n_x = {sys.nx}, n_u = {sys.nu}")
    dzw_norm = linalg.spectral_norm(sys.dzw)
    well_posed = dzw_norm < 1.0
    if strict and not well_posed:
        raise WellPosednessError(f"||Dzw||_2 = {dzw_norm:.6g} >= 1: uncertainty loop is not well posed")

    notes = []
    stabilizable = _pbh_rank_ok(sys.a, sys.bu, stacked_rows=False, only_unstable=True)
    if not stabilizable:
        notes.append("nominal (A, Bu) is not stabilizable")
    qhalf = linalg.psd_factor(cost.q)
    observable = _pbh_rank_ok(sys.a, qhalf, stacked_rows=True, only_unstable=False)
    if not observable:
        notes.append("nominal (A, Q^1/2) is not observable")

    # structural zero pattern of Delta_bar = Delta (I - Dzw Delta)^-1
    pat = _delta_pattern(sys.structure)
    feed_max = 0.0
    structural_zero = True
    if sys.n_p:
        closure = (pat != 0).astype(float)
        loop = ((np.abs(sys.dzw) @ pat) != 0).astype(float)
        term = closure
        for _ in range(sys.n_q):
            term = ((term @ loop) != 0).astype(float)
            closure = ((closure + term) != 0).astype(float)
        structural_zero = not np.any(np.abs(sys.dyw) @ closure @ np.abs(sys.dzu))
        if well_posed:
            rng = np.random.default_rng(seed)
            scale = 1.0 + np.max(np.abs(sys.dyw)) * np.max(np.abs(sys.dzu))
            for _ in range(samples):
                d = sample_delta(sys.structure, rng)
                feed_max = max(feed_max, float(np.max(np.abs(sys.dyw @ delta_bar(sys, d) @ sys.dzu))) / scale)
    feedthrough_zero = structural_zero and feed_max <= 1e-12
    if not feedthrough_zero:
        notes.append("feed-through Dyw * Delta_bar * Dzu is not identically zero")
    for msg in notes:
        warnings.warn(msg, stacklevel=2)
    return ValidationReport(dzw_norm, well_posed, stabilizable, observable,
                            feedthrough_zero, feed_max, notes)


def expand_delta(structure: Sequence[UncertaintyBlock], d: DeltaRealization) -> np.ndarray:
    """Full block-diagonal ``n_p x n_q`` matrix for a block realization."""
    if len(d.blocks) != len(structure):
        raise DimensionError(f"expected {len(structure)} uncertainty blocks, got {len(d.blocks)}")
    parts = []
    for i, (b, blk) in enumerate(zip(structure, d.blocks)):
        if blk.shape != (b.rows, b.cols):
            raise DimensionError(f"uncertainty block {i}: expected shape {(b.rows, b.cols)}, got {blk.shape}")
        parts.append(linalg.kron(np.eye(b.repeats), blk))
    return linalg.block_diag(*parts) if parts else np.zeros((0, 0))


def _loop_inverse_right(delta: np.ndarray, dzw: np.ndarray) -> np.ndarray:
    """``delta @ inv(I - dzw @ delta)`` with a conditioning check."""
    n_q = dzw.shape[0]
    if n_q == 0:
        return delta
    m = np.eye(n_q) - dzw @ delta
    if np.linalg.cond(m) > COND_LIMIT:
        raise SingularityError("I - Dzw Delta is numerically singular (is ||Dzw||_2 < 1?)")
    return np.linalg.solve(m.T, delta.T).T


def delta_bar(sys: UncertainSystem, d: DeltaRealization) -> np.ndarray:
    """Open-loop ``Delta (I - Dzw Delta)^-1`` for a realization."""
    return _loop_inverse_right(expand_delta(sys.structure, d), sys.dzw)


def closed_loop_delta_bar(cl: ClosedLoop, sys: UncertainSystem, d: DeltaRealization) -> np.ndarray:
    """``Delta (I - Dzw_bar Delta)^-1``: the map from ``Cz_bar x`` to ``w`` in closed loop."""
    return _loop_inverse_right(expand_delta(sys.structure, d), cl.dzwbar)


def sample_delta_batch(structure: Sequence[UncertaintyBlock], rng: np.random.Generator,
                       size: int) -> list[np.ndarray]:
    """``size`` i.i.d. admissible draws, as one ``(size, rows, cols)`` array per block."""
    out = []
    for b in structure:
        if b.rows == 1 and b.cols == 1:
            out.append(rng.uniform(-1.0, 1.0, size=(size, 1, 1)))
            continue
        g = rng.standard_normal((size, b.rows, b.cols))
        u = rng.uniform(0.0, 1.0, size=size)
        norms = np.linalg.norm(g, 2, axis=(1, 2))
        scale = u ** (1.0 / (b.rows * b.cols)) / np.maximum(1.0, norms)
        out.append(g * scale[:, None, None])
    return out


def sample_delta(structure: Sequence[UncertaintyBlock], rng: np.random.Generator) -> DeltaRealization:
    """One admissible realization.

    Scalar blocks are uniform on ``[-1, 1]``; larger blocks are
    ``G / max(1, ||G||_2) * u**(1/(rows*cols))`` with Gaussian ``G``.
    """
    return DeltaRealization(tuple(a[0] for a in sample_delta_batch(structure, rng, 1)))


def close_loop(sys: UncertainSystem, cost: CostFunctional, k) -> ClosedLoop:
    k = linalg.as_mat(k, "K")
    if k.shape != (sys.nu, sys.ny):
        raise DimensionError(f"K: expected shape {(sys.nu, sys.ny)}, got {k.shape}")
    return ClosedLoop(
        abar=sys.a - sys.bu @ k @ sys.cy,
        bwbar=sys.bw - sys.bu @ k @ sys.dyw,
        czbar=sys.cz - sys.dzu @ k @ sys.cy,
        dzwbar=sys.dzw - sys.dzu @ k @ sys.dyw,
        ccbar=cost.cc - cost.dcu @ k @ sys.cy,
        dcwbar=-cost.dcu @ k @ sys.dyw,
        k=k,
    )


def step(cl: ClosedLoop, sys: UncertainSystem, dbar: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Closed-loop state update for a closed-loop ``dbar`` (see ``closed_loop_delta_bar``).

    ``w = dbar @ Cz_bar @ x`` is the admissible disturbance, so the update is
    ``(A_bar + Bw_bar dbar Cz_bar) x``.
    """
    dbar = np.atleast_2d(np.asarray(dbar, dtype=float))
    if sys.n_p and dbar.shape != (sys.n_p, sys.n_q):
        raise DimensionError(f"dbar: expected shape {(sys.n_p, sys.n_q)}, got {dbar.shape}")
    x = np.asarray(x, dtype=float)
    if sys.n_p == 0:
        return cl.abar @ x
    return cl.abar @ x + cl.bwbar @ (dbar @ (cl.czbar @ x))


def perturbed_matrices(sys: UncertainSystem, d: DeltaRealization) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(A + dA, Bu + dBu, Cy + dCy)`` for a realization (direct plant form)."""
    db = delta_bar(sys, d) if sys.n_p else np.zeros((0, 0))
    return (sys.a + sys.bw @ db @ sys.cz,
            sys.bu + sys.bw @ db @ sys.dzu,
            sys.cy + sys.dyw @ db @ sys.cz)


def stage_cost(cost: CostFunctional, x, u) -> float:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (cost.q.shape[0],) or u.shape != (cost.r.shape[0],):
        raise DimensionError("stage_cost: state/input shape mismatch")
    return float(x @ cost.q @ x + 2.0 * x @ cost.n @ u + u @ cost.r @ u)
