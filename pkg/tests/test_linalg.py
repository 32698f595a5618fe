import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ntk_lens import linalg


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def random_symmetric(rng, n):
    a = rng.normal(size=(n, n))
    return a + a.T


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(linalg.matmul(np.eye(2), a), a)

    def test_small_product(self):
        out = linalg.matmul([[1, 2], [3, 4]], [[0], [1]])
        np.testing.assert_array_equal(out, [[2.0], [4.0]])

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
        np.testing.assert_allclose(linalg.matmul(a, b), triple_loop(a, b), rtol=0, atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(linalg.ShapeError, match=r"2x3.*2x3"):
            linalg.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(linalg.LinalgError):
            linalg.matmul([[np.nan]], [[1.0]])


class TestFrobenius:
    def test_self_product_is_squared_norm(self):
        a = np.arange(6.0).reshape(2, 3)
        assert linalg.frobenius_inner(a, a) == pytest.approx(linalg.frobenius_norm(a) ** 2, rel=1e-15)

    def test_disjoint_support(self):
        assert linalg.frobenius_inner(np.eye(2), [[0, 1], [1, 0]]) == 0.0

    def test_flatten_and_dot_oracle(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        oracle = sum(x * y for x, y in zip(a.ravel().tolist(), b.ravel().tolist()))
        assert abs(linalg.frobenius_inner(a, b) - oracle) <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(linalg.ShapeError):
            linalg.frobenius_inner(np.ones((2, 2)), np.ones((2, 3)))


class TestSymmetrize:
    def test_rejects_asymmetric(self):
        with pytest.raises(linalg.NotSymmetricError):
            linalg.symmetrize([[1.0, 2.0], [0.0, 1.0]])

    def test_tolerates_rounding_defect(self):
        a = np.array([[1.0, 0.5], [0.5 + 1e-12, 1.0]])
        out = linalg.symmetrize(a)
        np.testing.assert_array_equal(out, out.T)

    def test_non_square(self):
        with pytest.raises(linalg.ShapeError):
            linalg.symmetrize(np.ones((2, 3)))


@pytest.mark.parametrize("method", ["jacobi", "lapack"])
class TestSymEigendecompose:
    def test_identity(self, method):
        res = linalg.sym_eigendecompose(np.eye(2), method=method)
        np.testing.assert_array_equal(res.eigenvalues, [1.0, 1.0])

    def test_diagonal_sorted_descending(self, method):
        res = linalg.sym_eigendecompose(np.diag([1 / 3, 2 / 3]), method=method)
        np.testing.assert_allclose(res.eigenvalues, [2 / 3, 1 / 3], rtol=1e-15)

    def test_closed_form_2x2(self, method):
        # characteristic polynomial (2 - l)^2 - 1 = 0
        res = linalg.sym_eigendecompose([[2.0, 1.0], [1.0, 2.0]], method=method)
        np.testing.assert_allclose(res.eigenvalues, [3.0, 1.0], atol=1e-14)
        s = 1 / np.sqrt(2)
        np.testing.assert_allclose(res.eigenvectors[:, 0], [s, s], atol=1e-14)
        # second vector is (1, -1)/sqrt2 up to the sign rule; the tie picks index 0
        np.testing.assert_allclose(res.eigenvectors[:, 1], [s, -s], atol=1e-14)

    @pytest.mark.parametrize("n", [1, 2, 7, 30, 65])
    def test_contract(self, method, n):
        rng = np.random.default_rng(n)
        a = random_symmetric(rng, n)
        res = linalg.sym_eigendecompose(a, method=method)
        q, lam = res.eigenvectors, res.eigenvalues
        assert np.abs(q.T @ q - np.eye(n)).max() <= 1e-10
        assert np.abs(a - q @ np.diag(lam) @ q.T).max() <= 1e-8 * (1 + np.abs(a).max())
        assert np.all(np.diff(lam) <= 0)
        assert abs(lam.sum() - np.trace(a)) <= 1e-9 * (1 + abs(np.trace(a)))
        for j in range(n):
            col = q[:, j]
            assert col[np.argmax(np.abs(col))] >= 0

    def test_deterministic_bits(self, method):
        a = random_symmetric(np.random.default_rng(3), 12)
        r1 = linalg.sym_eigendecompose(a, method=method)
        r2 = linalg.sym_eigendecompose(a.copy(), method=method)
        assert r1.eigenvalues.tobytes() == r2.eigenvalues.tobytes()
        assert r1.eigenvectors.tobytes() == r2.eigenvectors.tobytes()

    def test_psd_eigenvalues_not_too_negative(self, method):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(20, 5))
        a = x @ x.T  # rank 5
        lam = linalg.sym_eigendecompose(a, method=method).eigenvalues
        assert lam.min() >= -1e-10 * np.linalg.norm(a)

    def test_non_square(self, method):
        with pytest.raises(linalg.ShapeError):
            linalg.sym_eigendecompose(np.ones((2, 3)), method=method)


class TestJacobiSpecifics:
    def test_agrees_with_lapack(self):
        a = random_symmetric(np.random.default_rng(5), 40)
        j = linalg.sym_eigendecompose(a, method="jacobi")
        lp = linalg.sym_eigendecompose(a, method="lapack")
        np.testing.assert_allclose(j.eigenvalues, lp.eigenvalues, atol=1e-11)
        # eigenvalues are simple here, so the sign rule fixes the vectors uniquely
        np.testing.assert_allclose(j.eigenvectors, lp.eigenvectors, atol=1e-9)

    def test_convergence_error_reports_residual(self):
        a = random_symmetric(np.random.default_rng(6), 10)
        with pytest.raises(linalg.ConvergenceError) as info:
            linalg.sym_eigendecompose(a, max_sweeps=1)
        assert info.value.residual > 0
        assert info.value.sweeps == 1

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            linalg.sym_eigendecompose(np.eye(2), method="qr")

    def test_eigenvalues_only_matches_full(self):
        a = random_symmetric(np.random.default_rng(7), 9)
        np.testing.assert_allclose(
            linalg.sym_eigenvalues(a), linalg.sym_eigendecompose(a).eigenvalues, atol=1e-12
        )

    @given(st.integers(min_value=2, max_value=12), st.integers(min_value=0, max_value=10_000))
    def test_property_reconstruction(self, n, seed):
        a = random_symmetric(np.random.default_rng(seed), n)
        res = linalg.sym_eigendecompose(a)
        q, lam = res.eigenvectors, res.eigenvalues
        assert np.abs(a - q @ np.diag(lam) @ q.T).max() <= 1e-8 * (1 + np.abs(a).max())


class TestClamp:
    def test_zeroes_small_negatives(self):
        out = linalg.clamp_nonnegative([1.0, -1e-12], scale=1.0)
        np.testing.assert_array_equal(out, [1.0, 0.0])

    def test_rejects_large_negatives(self):
        with pytest.raises(linalg.LinalgError):
            linalg.clamp_nonnegative([1.0, -1e-3], scale=1.0)
