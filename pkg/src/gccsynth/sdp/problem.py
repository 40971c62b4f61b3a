"""Standard-form SDP container with a small affine-expression builder.

Decision variables are a flat real vector ``x``.  Matrix variables are views
onto contiguous index ranges: symmetric variables use the ``svec``
parametrization, general ones are row-major.  Constraints are

* LMI blocks ``F0 + sum_i x_i F_i <= -margin * I`` (``margin > 0`` only for
  blocks flagged strict; the solver picks the value),
* linear equalities ``E x = f``,

and the objective is ``minimize c' x``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .. import linalg


class Affine:
    """Matrix-valued affine expression ``const + sum_k x[idx[k]] * coef[k]``."""

    __slots__ = ("const", "idx", "coef")
    __array_priority__ = 100.0
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, const: np.ndarray, idx=None, coef=None):
        const = np.atleast_2d(np.asarray(const, dtype=float))
        if idx is None:
            idx = np.zeros(0, dtype=np.int64)
            coef = np.zeros((0,) + const.shape)
        self.const = const
        self.idx = np.asarray(idx, dtype=np.int64)
        self.coef = np.asarray(coef, dtype=float)

    @staticmethod
    def lift(v) -> "Affine":
        if isinstance(v, Affine):
            return v
        return Affine(np.asarray(v, dtype=float))

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape

    @property
    def T(self) -> "Affine":
        return Affine(self.const.T, self.idx, self.coef.transpose(0, 2, 1))

    def __getitem__(self, key) -> "Affine":
        const = np.atleast_2d(self.const[key])
        coef = self.coef[(slice(None),) + (key if isinstance(key, tuple) else (key,))]
        return Affine(const, self.idx, coef.reshape((self.idx.size,) + const.shape))

    def __add__(self, other) -> "Affine":
        other = Affine.lift(other)
        if other.shape != self.shape:
            if other.const.size == 1 and not other.idx.size:
                return Affine(self.const + other.const.item(), self.idx, self.coef)
            raise ValueError(f"shape mismatch in sum: {self.shape} vs {other.shape}")
        if not other.idx.size:
            return Affine(self.const + other.const, self.idx, self.coef)
        if not self.idx.size:
            return Affine(self.const + other.const, other.idx, other.coef)
        idx = np.union1d(self.idx, other.idx)
        coef = np.zeros((idx.size,) + self.shape)
        coef[np.searchsorted(idx, self.idx)] += self.coef
        coef[np.searchsorted(idx, other.idx)] += other.coef
        return Affine(self.const + other.const, idx, coef)

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        return Affine(-self.const, self.idx, -self.coef)

    def __sub__(self, other) -> "Affine":
        return self + (-Affine.lift(other))

    def __rsub__(self, other) -> "Affine":
        return Affine.lift(other) + (-self)

    def __mul__(self, s) -> "Affine":
        if isinstance(s, Affine) or np.ndim(s) != 0:
            raise TypeError("Affine expressions only scale by scalars; use @ for products")
        return Affine(self.const * s, self.idx, self.coef * s)

    __rmul__ = __mul__

    def __matmul__(self, m) -> "Affine":
        if isinstance(m, Affine):
            raise TypeError("product of two affine expressions is not affine")
        m = np.atleast_2d(np.asarray(m, dtype=float))
        return Affine(self.const @ m, self.idx, self.coef @ m)

    def __rmatmul__(self, m) -> "Affine":
        m = np.atleast_2d(np.asarray(m, dtype=float))
        return Affine(m @ self.const, self.idx, np.matmul(m, self.coef))

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.idx.size:
            return self.const.copy()
        return self.const + np.tensordot(x[self.idx], self.coef, axes=1)

    def dense_coef(self, nvars: int) -> np.ndarray:
        out = np.zeros((nvars,) + self.shape)
        out[self.idx] = self.coef
        return out


def bmat(rows: Sequence[Sequence]) -> Affine:
    """Block matrix from affine expressions, constant arrays and ``None`` (zero)."""
    heights = []
    for r, row in enumerate(rows):
        h = {Affine.lift(b).shape[0] for b in row if b is not None}
        if len(h) != 1:
            raise ValueError(f"block row {r}: inconsistent or undetermined height {h}")
        heights.append(h.pop())
    widths = []
    for c in range(len(rows[0])):
        w = {Affine.lift(row[c]).shape[1] for row in rows if row[c] is not None}
        if len(w) != 1:
            raise ValueError(f"block column {c}: inconsistent or undetermined width {w}")
        widths.append(w.pop())
    roff = np.concatenate([[0], np.cumsum(heights)])
    coff = np.concatenate([[0], np.cumsum(widths)])
    parts = [(Affine.lift(b), i, j) for i, row in enumerate(rows) for j, b in enumerate(row) if b is not None]
    idx = np.unique(np.concatenate([p.idx for p, _, _ in parts])) if parts else np.zeros(0, np.int64)
    const = np.zeros((roff[-1], coff[-1]))
    coef = np.zeros((idx.size, roff[-1], coff[-1]))
    for p, i, j in parts:
        if p.shape != (heights[i], widths[j]):
            raise ValueError(f"block ({i}, {j}) has shape {p.shape}, expected {(heights[i], widths[j])}")
        rs, cs = slice(roff[i], roff[i + 1]), slice(coff[j], coff[j + 1])
        const[rs, cs] = p.const
        if p.idx.size:
            coef[np.searchsorted(idx, p.idx), rs, cs] += p.coef
    return Affine(const, idx, coef)


def trace(e: Affine) -> Affine:
    e = Affine.lift(e)
    return Affine(np.array([[np.trace(e.const)]]), e.idx, np.trace(e.coef, axis1=1, axis2=2)[:, None, None])


def sym(e: Affine) -> Affine:
    return 0.5 * (e + e.T)


def kron_eye(e: Affine, n: int) -> Affine:
    """``e (x) I_n``."""
    e = Affine.lift(e)
    eye = np.eye(n)
    coef = np.einsum("kij,ab->kiajb", e.coef, eye).reshape((e.idx.size,) + (e.shape[0] * n, e.shape[1] * n))
    return Affine(np.kron(e.const, eye), e.idx, coef)


def block_diag(*blocks) -> Affine:
    blocks = [Affine.lift(b) for b in blocks]
    rows = [[b if i == j else np.zeros((b.shape[0], c.shape[1])) for j, c in enumerate(blocks)]
            for i, b in enumerate(blocks)]
    return bmat(rows)


@dataclass(frozen=True, eq=False)
class AffineBlock:
    """Constraint ``f0 + sum_i x_i fi[i] <= -margin * I``."""

    f0: np.ndarray
    fi: np.ndarray
    strict: bool
    name: str = ""

    @property
    def dim(self) -> int:
        return self.f0.shape[0]

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.f0 + np.tensordot(x, self.fi, axes=1)


class SdpProblem:
    """Mutable while being built; ``seal()`` freezes it into dense arrays."""

    def __init__(self, name: str = ""):
        self.name = name
        self.nvars = 0
        self.var_names: list[str] = []
        self.variables: dict[str, tuple[str, int, int, tuple[int, ...]]] = {}
        self._lmis: list[tuple[Affine, bool, str]] = []
        self._eqs: list[Affine] = []
        self._objective: Affine | None = None
        self._sealed: tuple | None = None

    # -- variables ------------------------------------------------------
    def _alloc(self, count: int, name: str, labels: Iterable[str]) -> np.ndarray:
        if self._sealed is not None:
            raise RuntimeError("problem is sealed")
        start = self.nvars
        self.nvars += count
        self.var_names.extend(f"{name}{lab}" for lab in labels)
        return np.arange(start, start + count)

    def add_sym_var(self, dim: int, name: str = "S") -> Affine:
        m = linalg.svec_size(dim)
        j, i = np.triu_indices(dim)
        idx = self._alloc(m, name, (f"[{a},{b}]" for a, b in zip(i, j)))
        self.variables[name] = ("sym", int(idx[0]) if m else self.nvars, m, (dim, dim))
        return Affine(np.zeros((dim, dim)), idx, linalg.svec_basis(dim))

    def add_mat_var(self, rows: int, cols: int, name: str = "M") -> Affine:
        m = rows * cols
        idx = self._alloc(m, name, (f"[{a},{b}]" for a in range(rows) for b in range(cols)))
        self.variables[name] = ("mat", int(idx[0]) if m else self.nvars, m, (rows, cols))
        coef = np.zeros((m, rows, cols))
        coef[np.arange(m), np.repeat(np.arange(rows), cols), np.tile(np.arange(cols), rows)] = 1.0
        return Affine(np.zeros((rows, cols)), idx, coef)

    def add_scalar_var(self, name: str = "s") -> Affine:
        return self.add_mat_var(1, 1, name)

    # -- constraints ----------------------------------------------------
    def add_lmi(self, expr: Affine, strict: bool = True, name: str = "") -> None:
        """Require ``expr <= 0`` (``< 0`` when strict). ``expr`` is symmetrized."""
        expr = Affine.lift(expr)
        if expr.shape[0] != expr.shape[1]:
            raise ValueError(f"LMI {name!r} is not square: {expr.shape}")
        if expr.shape[0] == 0:
            return
        self._lmis.append((sym(expr), strict, name or f"lmi{len(self._lmis)}"))

    def add_psd(self, expr: Affine, strict: bool = True, name: str = "") -> None:
        """Require ``expr >= 0`` (``> 0`` when strict)."""
        self.add_lmi(-Affine.lift(expr), strict, name)

    def add_eq(self, lhs, rhs=0.0) -> None:
        e = Affine.lift(lhs) - Affine.lift(rhs)
        if e.const.size:
            self._eqs.append(e)

    def minimize(self, expr) -> None:
        e = Affine.lift(expr)
        if e.shape != (1, 1):
            raise ValueError("objective must be scalar")
        self._objective = e

    # -- sealed view ----------------------------------------------------
    def seal(self) -> "SdpProblem":
        if self._sealed is None:
            n = self.nvars
            c = np.zeros(n)
            c0 = 0.0
            if self._objective is not None:
                c = self._objective.dense_coef(n)[:, 0, 0]
                c0 = float(self._objective.const[0, 0])
            blocks = tuple(AffineBlock(e.const, e.dense_coef(n), strict, name)
                           for e, strict, name in self._lmis)
            rows, rhs = [], []
            for e in self._eqs:
                dc = e.dense_coef(n).reshape(n, -1)
                rows.append(dc.T)
                rhs.append(-e.const.ravel())
            E = np.vstack(rows) if rows else np.zeros((0, n))
            f = np.concatenate(rhs) if rhs else np.zeros(0)
            self._sealed = (c, c0, blocks, E, f)
        return self

    @property
    def objective(self) -> np.ndarray:
        return self.seal()._sealed[0]

    @property
    def objective_offset(self) -> float:
        return self.seal()._sealed[1]

    @property
    def lmi_blocks(self) -> tuple[AffineBlock, ...]:
        return self.seal()._sealed[2]

    @property
    def equalities(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.seal()._sealed
        return s[3], s[4]

    def value(self, expr: Affine, x: np.ndarray) -> np.ndarray:
        return Affine.lift(expr).value(x)
