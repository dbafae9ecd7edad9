import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aecnr import linalg
from aecnr.linalg import GevdResult, NotPositiveDefiniteError
from aecnr.verify import det_roots
from conftest import random_hermitian, random_pd


def rel_fro(X, Y):
    return np.linalg.norm(X - Y) / np.linalg.norm(Y)



class TestCholesky:
    def test_identity(self, backend):
        np.testing.assert_allclose(linalg.cholesky(np.eye(3)), np.eye(3), atol=0)

    def test_diagonal(self, backend):
        np.testing.assert_allclose(linalg.cholesky(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=0)

    def test_random_reconstructs(self, backend, rng):
        H = random_pd(rng, 4, cond=100.0)
        L = linalg.cholesky(H)
        assert np.allclose(np.triu(L, 1), 0)
        assert rel_fro(L @ L.conj().T, H) <= 1e-12

    def test_not_pd_reports_pivot(self, backend):
        H = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(NotPositiveDefiniteError) as err:
            linalg.cholesky(H)
        assert err.value.pivot == 1

    def test_batch_reports_matrix_index(self, backend):
        H = np.stack([np.eye(2), np.diag([1.0, 0.0])])
        with pytest.raises(NotPositiveDefiniteError) as err:
            linalg.cholesky(H)
        assert err.value.index == 1 and err.value.pivot == 1

    def test_rejects_nan(self, backend):
        with pytest.raises(ValueError):
            linalg.cholesky(np.array([[np.nan, 0], [0, 1.0]]))


class TestHermEig:
    def test_diagonal_sorted(self, backend):
        U, lam = linalg.herm_eig(np.diag([1.0, 5.0]))
        np.testing.assert_allclose(lam, [5.0, 1.0])
        np.testing.assert_allclose(np.abs(U), [[0, 1], [1, 0]], atol=1e-15)

    def test_two_by_two_char_poly(self, backend):
        # (2 - x)^2 - 1 = 0  ->  x = 3, 1
        _, lam = linalg.herm_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(lam, [3.0, 1.0], rtol=1e-14)

    def test_scaling_shares_vectors(self, backend, rng):
        H = random_hermitian(rng, 4)
        U1, l1 = linalg.herm_eig(H)
        U2, l2 = linalg.herm_eig(3.5 * H)
        np.testing.assert_allclose(l2, 3.5 * l1, rtol=1e-12)
        # same eigenvectors up to a per-column phase
        np.testing.assert_allclose(np.abs(np.sum(U1.conj() * U2, axis=0)), 1.0, rtol=1e-10)

    def test_reconstruction_and_unitarity(self, backend, rng):
        H = random_hermitian(rng, 6)
        U, lam = linalg.herm_eig(H)
        assert rel_fro((U * lam) @ U.conj().T, H) <= 1e-10
        assert np.abs(U.conj().T @ U - np.eye(6)).max() <= 1e-10
        assert np.all(np.diff(lam) <= 0)

    def test_constructed_spectrum(self, backend, rng):
        X = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
        V, _ = np.linalg.qr(X)
        d = np.array([7.0, 3.0, 0.5, -1.0, -4.0])
        _, lam = linalg.herm_eig((V * d) @ V.conj().T)
        np.testing.assert_allclose(lam, d, atol=1e-12)

    def test_non_hermitian_rejected(self, backend):
        with pytest.raises(ValueError, match="Hermitian"):
            linalg.herm_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestGevd:
    def test_diagonal_pencil(self, backend):
        g = linalg.gevd(np.diag([8.0, 1.0]), np.diag([2.0, 1.0]))
        np.testing.assert_allclose(g.ratios, [4.0, 1.0], rtol=1e-14)
        np.testing.assert_allclose(g.lambda_b, 1.0)

    def test_identity_second_matrix(self, backend, rng):
        A = random_hermitian(rng, 4)
        g = linalg.gevd(A, np.eye(4))
        _, lam = linalg.herm_eig(A)
        np.testing.assert_allclose(g.lambda_a, lam, atol=1e-12)

    def test_matches_determinant_roots(self, backend, rng):
        A = random_pd(rng, 4)
        B = random_pd(rng, 4)
        g = linalg.gevd(A, B)
        np.testing.assert_allclose(g.ratios, det_roots(A, B), rtol=1e-8)

    def test_indefinite_first_matrix(self, backend, rng):
        A = random_hermitian(rng, 4)
        B = random_pd(rng, 4)
        g = linalg.gevd(A, B)
        Q = g.Q
        assert rel_fro((Q * g.lambda_a) @ Q.conj().T, A) <= 1e-10
        assert rel_fro(Q @ Q.conj().T, B) <= 1e-10
        assert np.any(g.lambda_a < 0)

    def test_second_matrix_not_pd(self, backend):
        with pytest.raises(NotPositiveDefiniteError):
            linalg.gevd(np.eye(2), np.diag([1.0, -1.0]))

    def test_batched_matches_single(self, backend, rng):
        A = np.stack([random_pd(rng, 3) for _ in range(5)])
        B = np.stack([random_pd(rng, 3) for _ in range(5)])
        g = linalg.gevd(A, B)
        for k in range(5):
            gk = linalg.gevd(A[k], B[k])
            np.testing.assert_allclose(g.lambda_a[k], gk.lambda_a, rtol=1e-12)

    def test_congruence_invariance(self, backend, rng):
        A = random_pd(rng, 4)
        B = random_pd(rng, 4)
        T = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        g1 = linalg.gevd(A, B)
        g2 = linalg.gevd(T.conj().T @ A @ T, T.conj().T @ B @ T)
        np.testing.assert_allclose(g2.ratios, g1.ratios, rtol=1e-8)

    def test_ill_conditioned_whitening(self, backend, rng):
        # second matrix with a nearly singular block, as for a regularised noise-only pencil
        A = random_pd(rng, 4, cond=50.0)
        B = np.zeros((4, 4), complex)
        B[:2, :2] = random_pd(rng, 2)
        B = linalg.regularize(B)
        g = linalg.gevd(A, B)
        Q = g.Q
        assert rel_fro((Q * g.lambda_a) @ Q.conj().T, A) <= 1e-10
        assert rel_fro(Q @ Q.conj().T, B) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8))
def test_gevd_joint_diagonalisation_property(seed, n):
    rng = np.random.default_rng(seed)
    A = random_hermitian(rng, n)
    B = random_pd(rng, n, cond=1e3)
    g = linalg.gevd(A, B)
    Q = g.Q
    scale_a = np.linalg.norm(A)
    assert np.abs((Q * g.lambda_a) @ Q.conj().T - A).max() <= 1e-10 * scale_a
    assert np.abs(Q @ Q.conj().T - B).max() <= 1e-10 * np.linalg.norm(B)
    assert np.all(np.diff(g.ratios) <= 1e-12 * np.abs(g.ratios).max())


class TestSolve:
    def test_identity(self, backend):
        b = np.array([1 + 2j, -3.0, 0.5j])
        np.testing.assert_allclose(linalg.solve_hermitian(np.eye(3), b), b)

    def test_diagonal(self, backend):
        np.testing.assert_allclose(linalg.solve_hermitian(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])

    def test_random_residual(self, backend, rng):
        H = random_pd(rng, 5, cond=1e4)
        b = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        x = linalg.solve_hermitian(H, b)
        assert np.linalg.norm(H @ x - b) <= 1e-10 * np.linalg.norm(b)

    def test_block_rhs_batched(self, backend, rng):
        H = np.stack([random_pd(rng, 3) for _ in range(4)])
        b = rng.standard_normal((4, 3, 2)) + 0j
        x = linalg.solve_hermitian(H, b)
        np.testing.assert_allclose(H @ x, b, atol=1e-12)

    def test_not_pd(self, backend):
        with pytest.raises(NotPositiveDefiniteError):
            linalg.solve_hermitian(np.diag([1.0, 0.0]), [1.0, 1.0])


class TestRatioSort:
    def _result(self, ratios):
        n = len(ratios)
        return GevdResult(np.eye(n, dtype=complex), np.array(ratios, float), np.ones(n))

    def test_sorted_is_identity(self):
        g = self._result([4.0, 2.0, 1.0])
        s = linalg.ratio_sort(g)
        np.testing.assert_array_equal(s.Q, g.Q)
        np.testing.assert_array_equal(s.lambda_a, g.lambda_a)

    def test_reversed_swaps(self):
        s = linalg.ratio_sort(self._result([1.0, 4.0]))
        np.testing.assert_array_equal(s.lambda_a, [4.0, 1.0])
        np.testing.assert_array_equal(s.Q, [[0, 1], [1, 0]])

    def test_ties_keep_order(self):
        g = GevdResult(np.array([[1, 2], [3, 4]], complex), np.array([2.0, 2.0]), np.ones(2))
        s = linalg.ratio_sort(g)
        np.testing.assert_array_equal(s.Q, g.Q)

    def test_uses_ratio_not_first_eigenvalue(self):
        g = GevdResult(np.eye(2, dtype=complex), np.array([2.0, 3.0]), np.array([1.0, 0.5]))
        s = linalg.ratio_sort(g)
        np.testing.assert_array_equal(s.ratios, [6.0, 2.0])


def test_regularize_adds_scaled_identity():
    H = np.diag([1.0, 3.0])
    np.testing.assert_allclose(linalg.regularize(H, 0.5) - H, np.eye(2) * 0.5 * 2.0)


def test_backends_agree(rng):
    A = np.stack([random_hermitian(rng, 4) for _ in range(16)])
    B = np.stack([random_pd(rng, 4, cond=1e3) for _ in range(16)])
    results = {}
    for name in linalg.available_backends():
        prev = linalg.set_backend(name)
        try:
            results[name] = linalg.gevd(A, B)
        finally:
            linalg.set_backend(prev)
    ref = results.pop("python")
    for g in results.values():
        np.testing.assert_allclose(g.lambda_a, ref.lambda_a, rtol=1e-10, atol=1e-12)


def test_eig_unitary_after_deep_convergence(backend):
    # the extra sweep meets off-diagonals small enough that squaring them underflows
    rng = np.random.default_rng(1)
    X = rng.standard_normal((3000, 4, 4)) + 1j * rng.standard_normal((3000, 4, 4))
    A = X @ X.conj().transpose(0, 2, 1)
    U, lam = linalg.herm_eig(A)
    eye = np.eye(4)
    assert np.abs(U.conj().transpose(0, 2, 1) @ U - eye).max() <= 1e-13
    ref = np.linalg.eigvalsh(A)[:, ::-1]
    assert np.max(np.abs(lam - ref) / ref[:, :1]) <= 1e-13
