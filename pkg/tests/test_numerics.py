import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kerodeepc.kernels import KernelSpec, gram
from kerodeepc.numerics import (
    FactorizationError,
    KroneckerOperator,
    kron,
    kron_apply,
    kron_solve,
    nullspace_basis,
    pinv,
    spd_factor,
    spd_solve,
)

from conftest import random_spd


def test_kron_identity():
    np.testing.assert_array_equal(kron(np.eye(2), np.eye(3)), np.eye(6))


def test_kron_block_layout():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[0.0, 1.0], [1.0, 0.0]])
    expected = np.array(
        [
            [0, 1, 0, 2],
            [1, 0, 2, 0],
            [0, 3, 0, 4],
            [3, 0, 4, 0],
        ],
        dtype=float,
    )
    np.testing.assert_array_equal(kron(a, b), expected)
    np.testing.assert_array_equal(kron(a, b), np.kron(a, b))


def test_kron_mixed_product(rng):
    A, B = rng.standard_normal((3, 2)), rng.standard_normal((2, 4))
    C, D = rng.standard_normal((2, 5)), rng.standard_normal((4, 3))
    lhs = kron(A, B) @ kron(C, D)
    assert np.max(np.abs(lhs - kron(A @ C, B @ D))) < 1e-12


def test_kron_apply_identity():
    op = KroneckerOperator(np.eye(2), np.eye(2))
    np.testing.assert_array_equal(kron_apply(op, np.array([1.0, 2, 3, 4])), [1, 2, 3, 4])


def test_kron_apply_random_5x5(rng):
    A, B = rng.standard_normal((5, 5)), rng.standard_normal((5, 5))
    v = rng.standard_normal(25)
    assert np.max(np.abs(kron_apply(KroneckerOperator(A, B), v) - kron(A, B) @ v)) < 1e-12


def test_kron_apply_inverse_recovers_basis_vector(rng):
    Ku, Kx = random_spd(rng, 5), random_spd(rng, 5)
    op = KroneckerOperator(np.linalg.inv(Ku), np.linalg.inv(Kx))
    K = kron(Ku, Kx)
    for col in (0, 7, 24):
        e = np.zeros(25)
        e[col] = 1.0
        assert np.max(np.abs(kron_apply(op, K[:, col]) - e)) < 1e-8


def test_kron_apply_dimension_mismatch():
    with pytest.raises(ValueError):
        kron_apply(KroneckerOperator(np.eye(2), np.eye(3)), np.ones(5))


@settings(max_examples=60, deadline=None)
@given(
    p=st.integers(1, 8), q=st.integers(1, 8), r=st.integers(1, 8), s=st.integers(1, 8),
    cols=st.integers(0, 3), seed=st.integers(0, 2**31 - 1),
)
def test_kron_apply_matches_materialized(p, q, r, s, cols, seed):
    g = np.random.default_rng(seed)
    A, B = g.standard_normal((p, q)), g.standard_normal((r, s))
    v = g.standard_normal(q * s) if cols == 0 else g.standard_normal((q * s, cols))
    got = kron_apply(KroneckerOperator(A, B), v)
    assert got.shape == (kron(A, B) @ v).shape
    np.testing.assert_allclose(got, kron(A, B) @ v, atol=1e-12, rtol=1e-12)


def test_kronecker_operator_shape_and_dense(rng):
    A, B = rng.standard_normal((2, 3)), rng.standard_normal((4, 5))
    op = KroneckerOperator(A, B)
    assert op.shape == (8, 15)
    np.testing.assert_array_equal(op.to_dense(), kron(A, B))


def test_pinv_identity_and_zero():
    np.testing.assert_allclose(pinv(np.eye(3)), np.eye(3))
    np.testing.assert_array_equal(pinv(np.zeros((2, 2))), np.zeros((2, 2)))


def _penrose(A, P, tol):
    scale = max(1.0, np.abs(A).max(), np.abs(P).max())
    assert np.max(np.abs(A @ P @ A - A)) < tol * scale
    assert np.max(np.abs(P @ A @ P - P)) < tol * scale
    assert np.max(np.abs((A @ P).T - A @ P)) < tol * scale
    assert np.max(np.abs((P @ A).T - P @ A)) < tol * scale


def test_pinv_full_row_rank(rng):
    A = rng.standard_normal((3, 7))
    P = pinv(A)
    assert np.max(np.abs(A @ P - np.eye(3))) < 1e-10
    _penrose(A, P, 1e-9)


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 7), n=st.integers(1, 7), rank=st.integers(0, 7), seed=st.integers(0, 2**31 - 1))
def test_pinv_penrose_conditions(m, n, rank, seed):
    g = np.random.default_rng(seed)
    rank = min(rank, m, n)
    A = g.standard_normal((m, rank)) @ g.standard_normal((rank, n))
    _penrose(A, pinv(A), 1e-9)


def test_pinv_rejects_nonfinite():
    with pytest.raises(ValueError):
        pinv(np.array([[np.nan, 1.0]]))


def test_nullspace_trivial():
    assert nullspace_basis(np.eye(3)).shape == (3, 0)


def test_nullspace_of_ones_row():
    N = nullspace_basis(np.array([[1.0, 1.0]]))
    assert N.shape == (2, 1)
    assert np.linalg.norm(np.array([[1.0, 1.0]]) @ N) < 1e-12
    v = N[:, 0] / N[0, 0]
    np.testing.assert_allclose(v, [1.0, -1.0], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(rank=st.integers(0, 4), seed=st.integers(0, 2**31 - 1))
def test_nullspace_random_4x9(rank, seed):
    g = np.random.default_rng(seed)
    A = g.standard_normal((4, rank)) @ g.standard_normal((rank, 9)) if rank else np.zeros((4, 9))
    N = nullspace_basis(A)
    assert N.shape[1] == 9 - np.linalg.matrix_rank(A)
    assert np.max(np.abs(A @ N), initial=0.0) < 1e-10
    np.testing.assert_allclose(N.T @ N, np.eye(N.shape[1]), atol=1e-10)


def test_spd_solve_identity():
    f = spd_factor(np.eye(4))
    e2 = np.array([0.0, 1.0, 0.0, 0.0])
    np.testing.assert_array_equal(spd_solve(f, e2), e2)


def test_spd_solve_matches_dense_inverse(rng):
    A = rng.standard_normal((6, 6))
    S = A.T @ A + np.eye(6)
    b = rng.standard_normal(6)
    assert np.max(np.abs(spd_solve(spd_factor(S), b) - np.linalg.inv(S) @ b)) < 1e-9


def test_spd_solve_gaussian_gram_residual(rng):
    P = rng.uniform(-1, 1, (5, 2))
    K = gram(KernelSpec.gaussian(1.0), P).matrix
    f = spd_factor(K, 1e-8)
    b = rng.standard_normal(5)
    x = spd_solve(f, b)
    assert np.linalg.norm((K + 1e-8 * np.eye(5)) @ x - b) / np.linalg.norm(b) < 1e-8


def test_factor_reconstructs_source(rng):
    S = random_spd(rng, 30)
    f = spd_factor(S, jitter=0.5)
    L = f.factor
    assert np.allclose(L, np.tril(L))
    target = S + 0.5 * np.eye(30)
    assert np.max(np.abs(L @ L.T - target)) < 1e-10 * 30 * np.abs(target).max()
    assert f.jitter == 0.5


def test_factor_reports_indefinite():
    with pytest.raises(FactorizationError) as info:
        spd_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert info.value.min_eig == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        spd_factor(np.eye(2), jitter=-1.0)


def test_kron_solve_vector_and_matrix(rng):
    Ku, Kx = random_spd(rng, 4), random_spd(rng, 3)
    fu, fx = spd_factor(Ku), spd_factor(Kx)
    K = kron(Ku, Kx)
    v = rng.standard_normal(12)
    np.testing.assert_allclose(kron_solve(fu, fx, v), np.linalg.solve(K, v), atol=1e-10)
    V = rng.standard_normal((12, 3))
    np.testing.assert_allclose(kron_solve(fu, fx, V), np.linalg.solve(K, V), atol=1e-10)
    with pytest.raises(ValueError):
        kron_solve(fu, fx, np.ones(11))
