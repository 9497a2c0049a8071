import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elsem import numkit
from elsem.errors import IllConditioned

from conftest import random_spd


def test_vecs_two_by_two_order():
    a, b, c = 1.5, -2.0, 3.25
    np.testing.assert_array_equal(numkit.vecs([[a, b], [b, c]]), [a, b, c])


def test_vecs_identity():
    np.testing.assert_array_equal(numkit.vecs(np.eye(3)), [1, 0, 1, 0, 0, 1])


def test_vecs_three_by_three_column_order():
    M = np.array([[1, 2, 4], [2, 3, 5], [4, 5, 6]], float)
    np.testing.assert_array_equal(numkit.vecs(M), [1, 2, 3, 4, 5, 6])


def test_vecs_rejects_asymmetric():
    with pytest.raises(ValueError):
        numkit.vecs([[1.0, 2.0], [2.1, 1.0]])


def test_unvecs_examples():
    np.testing.assert_array_equal(numkit.unvecs([1, 0, 1]), np.eye(2))
    np.testing.assert_array_equal(numkit.unvecs([1, 2, 3]), [[1, 2], [2, 3]])


def test_unvecs_rejects_non_triangular_length():
    with pytest.raises(ValueError):
        numkit.unvecs(np.ones(4))


def test_round_trip_random_4x4(rng):
    A = rng.standard_normal((4, 4))
    M = A + A.T
    np.testing.assert_array_equal(numkit.unvecs(numkit.vecs(M)), M)
    v = rng.standard_normal(10)
    assert numkit.unvecs(v).shape == (4, 4)
    np.testing.assert_array_equal(numkit.vecs(numkit.unvecs(v)), v)


@settings(max_examples=60, deadline=None)
@given(p=st.integers(1, 10), seed=st.integers(0, 2 ** 32 - 1))
def test_round_trip_property(p, seed):
    r = np.random.default_rng(seed)
    A = r.standard_normal((p, p))
    M = A + A.T
    assert np.array_equal(numkit.unvecs(numkit.vecs(M)), M)
    v = r.standard_normal(numkit.vecs_dim(p))
    assert np.array_equal(numkit.vecs(numkit.unvecs(v)), v)


def test_duplication_matrix(rng):
    for p in (1, 2, 3, 5):
        A = rng.standard_normal((p, p))
        M = A + A.T
        np.testing.assert_array_equal(numkit.duplication_matrix(p) @ numkit.vecs(M),
                                      M.reshape(-1, order="F"))


def test_kron_examples(rng):
    np.testing.assert_array_equal(numkit.kron(np.eye(2), np.eye(2)), np.eye(4))
    np.testing.assert_array_equal(numkit.kron(3.0, -2.0), [-6.0])
    x, y = rng.standard_normal(4), rng.standard_normal(3)
    assert np.linalg.norm(numkit.kron(x, y)) == pytest.approx(
        np.linalg.norm(x) * np.linalg.norm(y), rel=1e-12)


def test_kron_mixed_product(rng):
    for _ in range(20):
        A, C = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
        B, D = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        lhs = numkit.kron(A, B) @ numkit.kron(C, D)
        np.testing.assert_allclose(lhs, numkit.kron(A @ C, B @ D), atol=1e-12)


def test_eigen_bounds_examples(rng):
    assert numkit.eigen_bounds(np.eye(3)) == pytest.approx((1.0, 1.0))
    assert numkit.eigen_bounds(np.diag([2.0, 5.0])) == pytest.approx((2.0, 5.0))
    A = rng.standard_normal((6, 6))
    S = A @ A.T
    lo, hi = numkit.eigen_bounds(S)
    assert lo <= hi
    U = rng.standard_normal((100, 6))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    rq = np.einsum("ij,jk,ik->i", U, S, U)
    assert np.all(rq >= lo - 1e-10 * hi) and np.all(rq <= hi * (1 + 1e-10))


def test_eigen_bounds_of_kron_inverse(rng):
    for _ in range(10):
        S = random_spd(rng, 3)
        Si = np.linalg.inv(S)
        lo, hi = numkit.eigen_bounds(S)
        H = numkit.kron(Si, Si)
        hlo, hhi = numkit.eigen_bounds((H + H.T) / 2)
        assert hlo == pytest.approx(1 / hi ** 2, rel=1e-9)
        assert hhi == pytest.approx(1 / lo ** 2, rel=1e-9)


def power_iteration_norm(M, iters=2000):
    x = np.ones(M.shape[1])
    G = M.T @ M
    for _ in range(iters):
        x = G @ x
        x /= np.linalg.norm(x)
    return float(np.sqrt(x @ G @ x))


def test_spectral_norm(rng):
    assert numkit.spectral_norm(np.eye(4)) == pytest.approx(1.0)
    assert numkit.spectral_norm(np.diag([3.0, -4.0])) == pytest.approx(4.0)
    M = rng.standard_normal((8, 8))
    assert numkit.spectral_norm(M) == pytest.approx(power_iteration_norm(M), abs=1e-8)
    S = random_spd(rng, 5)
    assert numkit.spectral_norm(S) == pytest.approx(numkit.eigen_bounds(S)[1], rel=1e-12)


def test_solve_pd_examples(rng):
    b = rng.standard_normal(3)
    np.testing.assert_allclose(numkit.solve_pd(np.eye(3), b), b)
    np.testing.assert_allclose(numkit.solve_pd(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])
    S = random_spd(rng, 5, cond=100.0)
    b = rng.standard_normal(5)
    x = numkit.solve_pd(S, b)
    assert np.linalg.norm(S @ x - b) <= numkit.SOLVE_RESIDUAL_TOL * np.linalg.norm(b)


def test_solve_pd_rejects_indefinite():
    with pytest.raises(IllConditioned) as info:
        numkit.solve_pd(np.diag([1.0, -2.0]), [1.0, 1.0])
    assert info.value.pivot <= 0


def test_logdet_and_inverse(rng):
    S = random_spd(rng, 4)
    assert numkit.logdet_pd(S) == pytest.approx(np.linalg.slogdet(S)[1], rel=1e-12)
    np.testing.assert_allclose(numkit.inv_pd(S) @ S, np.eye(4), atol=1e-10)
