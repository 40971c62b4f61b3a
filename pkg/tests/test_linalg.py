from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gccsynth import linalg

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def sym_matrices(max_n: int = 6):
    return st.integers(1, max_n).flatmap(
        lambda n: arrays(np.float64, (n, n), elements=finite).map(lambda a: (a + a.T) / 2))


def test_kron_small_cases():
    assert np.array_equal(linalg.kron(np.eye(2), np.eye(3)), np.eye(6))
    y = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(linalg.kron([[2.0]], y), 2 * y)


def test_kron_blocks():
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((2, 3)), rng.standard_normal((4, 5))
    z = linalg.kron(x, y)
    assert z.shape == (8, 15)
    for i in range(2):
        for j in range(3):
            assert np.array_equal(z[4 * i:4 * i + 4, 5 * j:5 * j + 5], x[i, j] * y)


@pytest.mark.parametrize("seed", range(20))
def test_kron_swap_identity(seed):
    rng = np.random.default_rng(seed)
    p, q, r = rng.integers(1, 5, size=3)
    x = rng.standard_normal((p, p))
    y = rng.standard_normal((q, r))
    lhs = linalg.kron(x, np.eye(q)) @ linalg.kron(np.eye(p), y)
    rhs = linalg.kron(np.eye(p), y) @ linalg.kron(x, np.eye(r))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_block_diagonal_swap_identity(seed):
    rng = np.random.default_rng(100 + seed)
    nblocks = rng.integers(1, 4)
    xs, ys, qs, rs, ps = [], [], [], [], []
    for _ in range(nblocks):
        p, q, r = (int(v) for v in rng.integers(1, 4, size=3))
        xs.append(rng.standard_normal((p, p)))
        ys.append(rng.standard_normal((q, r)))
        ps.append(p), qs.append(q), rs.append(r)
    ybig = linalg.block_diag(*[linalg.kron(np.eye(p), y) for p, y in zip(ps, ys)])
    left = linalg.block_diag(*[linalg.kron(x, np.eye(q)) for x, q in zip(xs, qs)])
    right = linalg.block_diag(*[linalg.kron(x, np.eye(r)) for x, r in zip(xs, rs)])
    assert np.max(np.abs(left @ ybig - ybig @ right)) <= 1e-12


def test_block_diag_shapes():
    m = linalg.block_diag(np.ones((1, 2)), 2 * np.ones((2, 1)))
    assert m.shape == (3, 3)
    assert np.array_equal(m, [[1, 1, 0], [0, 0, 2], [0, 0, 2]])


def test_spectral_norm():
    assert linalg.spectral_norm(np.zeros((3, 2))) == 0.0
    assert linalg.spectral_norm(np.diag([3.0, -4.0])) == pytest.approx(4.0, abs=1e-14)


def test_spectral_norm_power_iteration():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((5, 3))
    g = x.T @ x
    v = np.ones(3)
    for _ in range(2000):
        v = g @ v
        v /= np.linalg.norm(v)
    sigma = np.sqrt(v @ g @ v)
    assert abs(linalg.spectral_norm(x) - sigma) <= 1e-10


def test_eig_sym_examples():
    w, v = linalg.eig_sym(np.eye(3))
    assert np.allclose(w, 1.0)
    w, v = linalg.eig_sym([[1.0, 2.0], [2.0, 1.0]])
    assert np.allclose(w, [-1.0, 3.0], atol=1e-14)


def test_eig_sym_random_residuals():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a = rng.standard_normal((8, 8))
        a = (a + a.T) / 2
        w, v = linalg.eig_sym(a)
        assert np.all(np.diff(w) >= 0)
        scale = 1.0 + np.linalg.norm(a, 2)
        assert np.max(np.abs(v @ np.diag(w) @ v.T - a)) < 1e-10 * scale
        assert np.max(np.abs(v.T @ v - np.eye(8))) < 1e-10


@settings(max_examples=60, deadline=None)
@given(sym_matrices())
def test_eig_sym_property(a):
    w, v = linalg.eig_sym(a)
    scale = 1.0 + np.linalg.norm(a, 2)
    assert np.max(np.abs(v @ np.diag(w) @ v.T - a)) < 1e-10 * scale
    assert np.max(np.abs(v.T @ v - np.eye(a.shape[0]))) < 1e-10


def test_eig_sym_budget_exhausted():
    a = np.random.default_rng(0).standard_normal((6, 6))
    with pytest.raises(linalg.ConvergenceError):
        linalg.eig_sym(a + a.T, max_sweeps=1)


def test_psd_factor_examples():
    f = linalg.psd_factor(np.eye(5))
    assert np.allclose(f.T @ f, np.eye(5), atol=1e-14)
    assert np.allclose(f @ f.T, np.eye(5), atol=1e-14)
    f = linalg.psd_factor(np.diag([4.0, 0.0]))
    assert np.allclose(f.T @ f, np.diag([4.0, 0.0]), atol=1e-14)
    w = linalg.block_diag(np.eye(3), np.eye(2))
    f = linalg.psd_factor(w)
    assert f.shape == (5, 5)
    assert np.allclose(f.T @ f, np.eye(5), atol=1e-12)


def test_psd_factor_clips_and_rejects():
    f = linalg.psd_factor(np.diag([1.0, -1e-12]), tol=1e-9)
    assert np.allclose(f.T @ f, np.diag([1.0, 0.0]))
    with pytest.raises(linalg.NotPSDError) as err:
        linalg.psd_factor(np.diag([1.0, -0.5]), tol=1e-9)
    assert err.value.lambda_min == pytest.approx(-0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5).flatmap(lambda n: arrays(np.float64, (n, n), elements=st.floats(-10, 10))))
def test_psd_factor_property(g):
    x = g.T @ g
    f = linalg.psd_factor(x)
    assert np.max(np.abs(f.T @ f - x)) <= linalg.psd_tol(x) + 1e-12 * (1 + np.abs(x).max())


def test_pinv_examples():
    assert np.allclose(linalg.pinv(np.eye(4)), np.eye(4))
    cy = np.vstack([np.eye(3), np.zeros((1, 3))])
    assert np.allclose(linalg.pinv(cy), cy.T, atol=1e-15)


def test_pinv_penrose_identities():
    rng = np.random.default_rng(11)
    for _ in range(20):
        x = rng.standard_normal((4, 2)) @ rng.standard_normal((2, 6))
        g = linalg.pinv(x)
        assert np.allclose(x @ g @ x, x, atol=1e-9)
        assert np.allclose(g @ x @ g, g, atol=1e-9)
        assert np.allclose((x @ g).T, x @ g, atol=1e-9)
        assert np.allclose((g @ x).T, g @ x, atol=1e-9)


def test_svec_ordering():
    assert np.array_equal(linalg.svec(np.eye(2)), [1.0, 0.0, 1.0])
    a = np.array([[1.0, 2.0, 4.0], [2.0, 3.0, 5.0], [4.0, 5.0, 6.0]])
    r2 = np.sqrt(2.0)
    # column-major lower triangle
    assert np.allclose(linalg.svec(a), [1, 2 * r2, 4 * r2, 3, 5 * r2, 6])


def test_svec_trace_identity():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = rng.integers(1, 9)
        a, b = rng.standard_normal((2, n, n))
        a, b = a + a.T, b + b.T
        lhs = linalg.svec(a) @ linalg.svec(b)
        assert abs(lhs - np.trace(a @ b)) <= 1e-12 * max(1.0, np.abs(a).sum() * np.abs(b).max())


@settings(max_examples=100, deadline=None)
@given(sym_matrices(8))
def test_svec_roundtrip_within_one_ulp(a):
    back = linalg.smat(linalg.svec(a))
    assert np.all(np.abs(back - a) <= np.spacing(np.abs(a)))
    assert np.array_equal(back, back.T)


def test_smat_length_mismatch():
    with pytest.raises(ValueError):
        linalg.smat(np.zeros(4))


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        linalg.as_mat(np.zeros((0, 3)))
