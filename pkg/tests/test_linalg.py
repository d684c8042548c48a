import numpy as np
import pytest

from kernelbcd.errors import DimensionMismatchError, IndexOutOfRangeError, NotSpdError
from kernelbcd.linalg import (
    apply_selector,
    gram,
    lambda_extremes,
    spd_solve,
    validate_indices,
)


class TestSpdSolve:
    def test_identity(self):
        x = spd_solve(np.eye(2), np.array([[1.0], [2.0]]))
        assert np.allclose(x, [[1.0], [2.0]])

    def test_two_by_two(self):
        a = np.array([[2.0, 1.0], [1.0, 2.0]])
        x = spd_solve(a, np.array([[3.0], [3.0]]))
        assert np.allclose(x, [[1.0], [1.0]], atol=1e-12)
        assert np.allclose(a @ x, [[3.0], [3.0]], atol=1e-12)

    def test_recovers_planted_solution(self):
        rng = np.random.default_rng(0)
        raw = rng.standard_normal((8, 8))
        a = raw @ raw.T + 8 * np.eye(8)
        planted = rng.standard_normal((8, 3))
        x = spd_solve(a, a @ planted)
        assert np.linalg.norm(x - planted) <= 1e-10 * np.linalg.norm(planted)

    def test_recovery_across_condition_numbers(self):
        rng = np.random.default_rng(1)
        for cond in (1e2, 1e5, 1e8):
            q, _ = np.linalg.qr(rng.standard_normal((12, 12)))
            vals = np.geomspace(1.0, 1.0 / cond, 12)
            a = (q * vals) @ q.T
            a = (a + a.T) / 2
            planted = rng.standard_normal((12, 2))
            x = spd_solve(a, a @ planted)
            rel = np.linalg.norm(x - planted) / np.linalg.norm(planted)
            assert rel <= 1e-8, f"cond {cond}: rel err {rel}"

    def test_indefinite_raises(self):
        with pytest.raises(NotSpdError):
            spd_solve(np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones((2, 1)))

    def test_asymmetric_raises(self):
        with pytest.raises(NotSpdError):
            spd_solve(np.array([[1.0, 0.5], [0.0, 1.0]]), np.ones((2, 1)))

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionMismatchError):
            spd_solve(np.eye(3), np.ones((2, 1)))


class TestGram:
    def test_identity(self):
        assert np.array_equal(gram(np.eye(3)), np.eye(3))

    def test_single_column(self):
        g = gram(np.array([[1.0], [2.0], [2.0]]))
        assert g.shape == (1, 1)
        assert g[0, 0] == 9.0

    def test_matches_entrywise_dot_products(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal((10, 3))
        g = gram(z)
        for i in range(3):
            for j in range(3):
                assert g[i, j] == pytest.approx(float(z[:, i] @ z[:, j]), rel=1e-14)

    def test_symmetric_psd_on_random_inputs(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            rows, cols = rng.integers(1, 30), rng.integers(1, 10)
            z = rng.standard_normal((rows, cols)) * rng.uniform(0.1, 100)
            g = gram(z)
            assert np.array_equal(g, g.T)
            vals = np.linalg.eigvalsh(g)
            assert vals[0] >= -1e-10 * max(vals[-1], 0.0)


class TestApplySelector:
    def test_single_scatter(self):
        out = apply_selector(3, [1], np.array([[5.0]]))
        assert np.array_equal(out, [[0.0], [5.0], [0.0]])

    def test_identity_selector(self):
        assert np.array_equal(apply_selector(2, [0, 1], np.eye(2)), np.eye(2))

    def test_scatter_positions(self):
        out = apply_selector(5, [4, 0], np.array([[1.0], [2.0]]))
        expected = np.zeros((5, 1))
        expected[4, 0] = 1.0
        expected[0, 0] = 2.0
        assert np.array_equal(out, expected)

    def test_gather_roundtrip(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            n = int(rng.integers(2, 20))
            size = int(rng.integers(1, n + 1))
            idx = rng.choice(n, size=size, replace=False)
            a = rng.standard_normal((size, 3))
            assert np.array_equal(apply_selector(n, idx, a)[idx], a)

    def test_out_of_range(self):
        with pytest.raises(IndexOutOfRangeError):
            apply_selector(3, [3], np.array([[1.0]]))
        with pytest.raises(IndexOutOfRangeError):
            apply_selector(3, [1, 1], np.ones((2, 1)))


class TestValidateIndices:
    def test_keeps_order(self):
        assert np.array_equal(validate_indices([4, 0, 2], 5), [4, 0, 2])

    def test_rejects_negative(self):
        with pytest.raises(IndexOutOfRangeError):
            validate_indices([-1], 5)


class TestLambdaExtremes:
    def test_diagonal(self):
        est = lambda_extremes(np.diag([1.0, 2.0, 3.0]))
        assert est.converged
        assert est.lmax == pytest.approx(3.0, rel=1e-9)
        assert est.lmin == pytest.approx(1.0, rel=1e-9)

    def test_identity(self):
        est = lambda_extremes(np.eye(4))
        assert est.converged
        assert est.lmax == pytest.approx(1.0)
        assert est.lmin == pytest.approx(1.0)

    def test_against_dense_eigensolve(self):
        rng = np.random.default_rng(5)
        raw = rng.standard_normal((12, 12))
        a = raw @ raw.T + np.eye(12)
        est = lambda_extremes(a, iters=20000)
        vals = np.linalg.eigvalsh(a)
        assert est.lmax == pytest.approx(vals[-1], rel=1e-6)
        assert est.lmin == pytest.approx(vals[0], rel=1e-6)

    def test_negative_spectrum(self):
        a = np.diag([-5.0, -1.0, 2.0])
        est = lambda_extremes(a, iters=20000)
        assert est.lmax == pytest.approx(2.0, rel=1e-6)
        assert est.lmin == pytest.approx(-5.0, rel=1e-6)

    def test_projection_matches_submatrix(self):
        # restricting P_I A P_I to the selected coordinates is the same
        # operator as the principal submatrix A(I, I)
        rng = np.random.default_rng(6)
        raw = rng.standard_normal((9, 9))
        a = raw @ raw.T + np.eye(9)
        idx = np.array([1, 4, 7])
        projected = np.zeros_like(a)
        projected[np.ix_(idx, idx)] = a[np.ix_(idx, idx)]
        sub_est = lambda_extremes(a[np.ix_(idx, idx)], iters=20000)
        sub_vals = np.linalg.eigvalsh(a[np.ix_(idx, idx)])
        proj_vals = np.linalg.eigvalsh(projected)
        assert sub_est.lmax == pytest.approx(sub_vals[-1], rel=1e-8)
        assert proj_vals[-1] == pytest.approx(sub_vals[-1], rel=1e-12)

    def test_nonconvergence_is_flagged_not_raised(self):
        rng = np.random.default_rng(7)
        raw = rng.standard_normal((30, 30))
        a = raw @ raw.T
        est = lambda_extremes(a, iters=2, tol=1e-308)
        assert not est.converged
        assert np.isfinite(est.lmax) and np.isfinite(est.lmin)

    def test_zero_matrix(self):
        est = lambda_extremes(np.zeros((3, 3)))
        assert est.lmax == 0.0 and est.lmin == 0.0
