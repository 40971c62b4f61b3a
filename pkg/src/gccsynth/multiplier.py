"""Structured multipliers and the quadratic forms they induce.

For ``w = Delta z`` with ``Delta`` in the structured set, every multiplier
choice ``Lambda_i >= 0`` gives ``w' Lambda_p w - z' Lambda_q z <= 0``.
``s_matrix`` returns that form in the ``xi = (x, w)`` coordinates, so that
``xi' S xi <= 0`` at every admissible point; robustness LMIs take the form
``Theta - S <= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import linalg
from .model import (ClosedLoop, DeltaRealization, DimensionError, UncertaintyBlock,
                    UncertainSystem, closed_loop_delta_bar)

PSD_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MultiplierSet:
    """One ``repeats_i x repeats_i`` PSD block per uncertainty block.

    The same type holds the inverse multipliers used by the synthesis LMIs;
    callers track which one they hold.
    """

    blocks: tuple[np.ndarray, ...]
    structure: tuple[UncertaintyBlock, ...]

    def __post_init__(self):
        blocks = tuple(linalg.as_sym(b, f"Lambda_{i + 1}") for i, b in enumerate(self.blocks))
        structure = tuple(self.structure)
        if len(blocks) != len(structure):
            raise DimensionError(f"{len(blocks)} multiplier blocks for {len(structure)} uncertainty blocks")
        for i, (lam, b) in enumerate(zip(blocks, structure)):
            if lam.shape != (b.repeats, b.repeats):
                raise DimensionError(f"Lambda_{i + 1}: expected {b.repeats}x{b.repeats}, got {lam.shape}")
            if linalg.min_eig(lam) < -PSD_TOL:
                raise ValueError(f"Lambda_{i + 1} is not positive semidefinite")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "structure", structure)

    @classmethod
    def scaled_identity(cls, structure: Sequence[UncertaintyBlock], tau: float = 1.0) -> "MultiplierSet":
        return cls(tuple(tau * np.eye(b.repeats) for b in structure), tuple(structure))

    def inverse(self) -> "MultiplierSet":
        return MultiplierSet(tuple(np.linalg.inv(b) for b in self.blocks), self.structure)

    def __add__(self, other: "MultiplierSet") -> "MultiplierSet":
        return MultiplierSet(tuple(a + b for a, b in zip(self.blocks, other.blocks)), self.structure)


def assemble(ms: MultiplierSet) -> tuple[np.ndarray, np.ndarray]:
    """``(Lambda_p, Lambda_q)`` = ``diag(Lambda_i (x) I_{n_pi})``, ``diag(Lambda_i (x) I_{n_qi})``."""
    lp = [linalg.kron(lam, np.eye(b.rows)) for lam, b in zip(ms.blocks, ms.structure)]
    lq = [linalg.kron(lam, np.eye(b.cols)) for lam, b in zip(ms.blocks, ms.structure)]
    if not lp:
        return np.zeros((0, 0)), np.zeros((0, 0))
    return linalg.block_diag(*lp), linalg.block_diag(*lq)


def s_matrix(cl: ClosedLoop, lambda_p: np.ndarray, lambda_q: np.ndarray) -> np.ndarray:
    """Quadratic form ``xi' S xi = w' Lambda_p w - z' Lambda_q z`` with ``z = Cz_bar x + Dzw_bar w``."""
    czb, dzb = cl.czbar, cl.dzwbar
    n_q, n_p = dzb.shape
    if lambda_p.shape != (n_p, n_p) or lambda_q.shape != (n_q, n_q):
        raise DimensionError("multiplier shapes do not match the closed-loop uncertainty channels")
    out = np.block([
        [-czb.T @ lambda_q @ czb, -czb.T @ lambda_q @ dzb],
        [-dzb.T @ lambda_q @ czb, lambda_p - dzb.T @ lambda_q @ dzb],
    ])
    return linalg.sym(out)


def s_unstructured(cl: ClosedLoop) -> np.ndarray:
    """The single-multiplier form (``Lambda_p = I``, ``Lambda_q = I``)."""
    n_q, n_p = cl.dzwbar.shape
    return s_matrix(cl, np.eye(n_p), np.eye(n_q))


def admissible_point(cl: ClosedLoop, sys: UncertainSystem, x, d: DeltaRealization) -> np.ndarray:
    """``xi = (x, w)`` with ``w`` solving ``w = Delta (Cz_bar x + Dzw_bar w)``."""
    x = np.asarray(x, dtype=float)
    if sys.n_p == 0:
        return x.copy()
    w = closed_loop_delta_bar(cl, sys, d) @ (cl.czbar @ x)
    return np.concatenate([x, w])
