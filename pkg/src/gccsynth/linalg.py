"""Dense real matrix kernel.

Matrices are plain 2-D ``numpy`` float arrays. The helpers here add the
validation and tolerance conventions used throughout the package:

* PSD / factorization tolerance: ``1e-9`` absolute plus ``1e-12`` relative to
  the Frobenius norm of the input.
* pseudo-inverse cutoff: singular values below ``1e-12 * sigma_max`` are zero.
* ``svec`` ordering: column-major lower triangle, off-diagonals scaled by
  ``sqrt(2)`` so that ``svec(a) @ svec(b) == trace(a @ b)``.
"""

from __future__ import annotations

import math

import numpy as np

ABS_TOL = 1e-9
REL_TOL = 1e-12
PINV_RTOL = 1e-12
JACOBI_MAX_SWEEPS = 100

_SQRT2 = math.sqrt(2.0)


class NotPSDError(ValueError):
    """Raised when a matrix that must be positive semidefinite is not."""

    def __init__(self, lambda_min: float, tol: float):
        super().__init__(f"matrix is not PSD: lambda_min = {lambda_min:.3e} < -{tol:.3e}")
        self.lambda_min = lambda_min
        self.tol = tol


class ConvergenceError(RuntimeError):
    pass


def as_mat(x, name: str = "matrix", allow_empty: bool = False) -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float array."""
    a = np.array(x, dtype=float, ndmin=2)
    if a.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D matrix, got shape {a.shape}")
    if not allow_empty and (a.shape[0] < 1 or a.shape[1] < 1):
        raise ValueError(f"{name}: empty matrix of shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite entries")
    return a


def as_sym(x, name: str = "matrix", tol: float = 1e-10) -> np.ndarray:
    """Coerce ``x`` to a symmetric matrix, averaging away tiny asymmetry."""
    a = as_mat(x, name)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name}: expected a square matrix, got shape {a.shape}")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > tol * (1.0 + np.max(np.abs(a))):
        raise ValueError(f"{name}: not symmetric (max |a - a^T| = {asym:.3e})")
    return 0.5 * (a + a.T)


def sym(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.T)


def psd_tol(x: np.ndarray) -> float:
    return ABS_TOL + REL_TOL * float(np.linalg.norm(x))


def kron(x, y) -> np.ndarray:
    """Kronecker product; block ``(i, j)`` of the result is ``x[i, j] * y``."""
    return np.kron(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def block_diag(*blocks) -> np.ndarray:
    """Block-diagonal assembly. Zero-sized blocks are allowed and vanish."""
    mats = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for m in mats:
        out[r:r + m.shape[0], c:c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


def spectral_norm(x) -> float:
    a = np.asarray(x, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.linalg.svd(a, compute_uv=False)[0])


def _offdiag_norm(a: np.ndarray) -> float:
    # summing the off-diagonal squares directly; ||a||^2 - ||diag||^2 cancels badly
    m = a.copy()
    np.fill_diagonal(m, 0.0)
    return float(np.linalg.norm(m))


def eig_sym(x, max_sweeps: int = JACOBI_MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.

    Returns ``(w, v)`` with ``w`` ascending and ``v`` orthonormal such that
    ``x == v @ diag(w) @ v.T``.
    """
    a = as_sym(x).copy()
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    target = 1e-15 * scale
    for _ in range(max_sweeps):
        off = _offdiag_norm(a)
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.hypot(1.0, tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = _offdiag_norm(a)
        if off > target:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps (off = {off:.3e})")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def psd_factor(x, tol: float | None = None) -> np.ndarray:
    """Square factor ``F`` with ``F.T @ F == x`` for a PSD matrix ``x``.

    Eigenvalues in ``[-tol, 0)`` are clipped to zero.
    """
    a = as_sym(x)
    if tol is None:
        tol = psd_tol(a)
    w, v = eig_sym(a)
    if w[0] < -tol:
        raise NotPSDError(float(w[0]), tol)
    w = np.clip(w, 0.0, None)
    return np.sqrt(w)[:, None] * v.T


def min_eig(x) -> float:
    return float(np.linalg.eigvalsh(sym(np.asarray(x, dtype=float)))[0])


def max_eig(x) -> float:
    return float(np.linalg.eigvalsh(sym(np.asarray(x, dtype=float)))[-1])


def pinv(x, rtol: float = PINV_RTOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse with a relative singular-value cutoff."""
    a = as_mat(x)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(a.T.shape)
    keep = s > rtol * s[0]
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def svec_size(n: int) -> int:
    return n * (n + 1) // 2


def svec_dim(m: int) -> int:
    n = int(round((math.sqrt(8 * m + 1) - 1) / 2))
    if svec_size(n) != m:
        raise ValueError(f"length {m} is not a triangular number")
    return n


def _tril_colmajor(n: int) -> tuple[np.ndarray, np.ndarray]:
    # column-major lower triangle == row-major upper triangle, transposed
    j, i = np.triu_indices(n)
    return i, j


def svec(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    i, j = _tril_colmajor(a.shape[0])
    v = a[i, j].copy()
    v[i != j] *= _SQRT2
    return v


def smat(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = svec_dim(v.size)
    i, j = _tril_colmajor(n)
    vals = v.copy()
    vals[i != j] /= _SQRT2
    out = np.zeros((n, n))
    out[i, j] = vals
    out[j, i] = vals
    return out


def svec_basis(n: int) -> np.ndarray:
    """Symmetric basis matrices ``E_k`` with ``smat(v) == sum_k v[k] E_k``."""
    i, j = _tril_colmajor(n)
    basis = np.zeros((i.size, n, n))
    k = np.arange(i.size)
    diag = i == j
    basis[k[diag], i[diag], j[diag]] = 1.0
    off = ~diag
    basis[k[off], i[off], j[off]] = 1.0 / _SQRT2
    basis[k[off], j[off], i[off]] = 1.0 / _SQRT2
    return basis
