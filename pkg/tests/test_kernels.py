import numpy as np
import pytest

from mfcokrig.exceptions import ConditioningError, InvalidParameterError
from mfcokrig.kernels import (
    CorrelationParams,
    _matern_bessel,
    correlation_matrix,
    cross_correlation_vector,
    matern_correlation,
    product_correlation,
    whiten,
)


class TestMaternCorrelation:
    def test_zero_distance_identity(self):
        assert matern_correlation(0.0, 1.3, 2.5) == pytest.approx(1.0, abs=0)

    def test_closed_form_value_at_u_equal_theta(self):
        # independent high-precision evaluation of the smoothness-2.5 kernel
        expected = (1 + np.sqrt(5) + 5 / 3) * np.exp(-np.sqrt(5))
        assert matern_correlation(1.0, 1.0, 2.5) == pytest.approx(expected, abs=1e-15)

    def test_strictly_decreasing(self):
        assert matern_correlation(2.0, 1.0, 2.5) < matern_correlation(1.0, 1.0, 2.5)
        u = np.linspace(0.0, 10.0, 200)
        vals = matern_correlation(u, 0.7, 2.5)
        assert np.all(np.diff(vals) < 0)

    def test_closed_form_matches_bessel_form(self):
        # oracle: general-nu Bessel-form Matern evaluated at nu = 2.5
        ratios = np.geomspace(1e-6, 20.0, 400)
        for theta in (0.3, 1.0, 4.2):
            u = ratios * theta
            closed = matern_correlation(u, theta, 2.5)
            bessel = _matern_bessel(u, theta, 2.5)
            assert np.max(np.abs(closed - bessel)) < 1e-12

    def test_invalid_parameters(self):
        with pytest.raises(InvalidParameterError):
            matern_correlation(1.0, -1.0, 2.5)
        with pytest.raises(InvalidParameterError):
            matern_correlation(1.0, 1.0, 0.0)


class TestProductCorrelation:
    def test_identical_points(self):
        p = CorrelationParams(ranges=np.array([1.0, 5.0]))
        assert product_correlation([0.3, 9.1], [0.3, 9.1], p) == pytest.approx(1.0)

    def test_zero_difference_factor_is_one(self):
        p = CorrelationParams(ranges=np.array([1.0, 5.0]))
        got = product_correlation([1.0, 2.0], [0.0, 2.0], p)
        assert got == pytest.approx(matern_correlation(1.0, 1.0, 2.5), abs=1e-15)

    def test_generic_point_matches_scalar_multiplication(self):
        p = CorrelationParams(ranges=np.array([0.8, 2.5]))
        x, x2 = np.array([0.2, 1.4]), np.array([1.1, -0.3])
        oracle = matern_correlation(abs(0.2 - 1.1), 0.8, 2.5) * matern_correlation(
            abs(1.4 + 0.3), 2.5, 2.5
        )
        assert product_correlation(x, x2, p) == pytest.approx(oracle, abs=1e-14)

    def test_dimension_mismatch(self):
        p = CorrelationParams(ranges=np.array([1.0]))
        with pytest.raises(InvalidParameterError):
            product_correlation([1.0, 2.0], [0.0, 0.0], p)


class TestCorrelationMatrix:
    def test_single_point(self):
        R = correlation_matrix(np.array([[0.4]]), CorrelationParams(ranges=[1.0]))
        assert R.values.shape == (1, 1)
        assert R.values[0, 0] == pytest.approx(1.0)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(size=(17, 3))
        R = correlation_matrix(X, CorrelationParams(ranges=[0.5, 0.5, 0.5]))
        assert np.array_equal(R.values, R.values.T)
        assert np.allclose(np.diag(R.values), 1.0)

    def test_collinear_points_distance_monotone(self):
        X = np.array([[0.0], [1.0], [2.0]])
        R = correlation_matrix(X, CorrelationParams(ranges=[1.0]))
        assert R.values[0, 2] < R.values[0, 1]

    @pytest.mark.parametrize("n", [10, 60, 200])
    def test_cholesky_succeeds_with_default_jitter(self, n):
        rng = np.random.default_rng(n)
        X = rng.uniform(size=(n, 3))
        R = correlation_matrix(X, CorrelationParams(ranges=[2.0, 2.0, 2.0]))
        assert R.chol.shape == (n, n)

    def test_conditioning_error_reports_ranges(self):
        X = np.array([[0.0], [1e-14]])
        with pytest.raises(ConditioningError, match="ranges"):
            correlation_matrix(X, CorrelationParams(ranges=[1.0]), jitter=0.0)


class TestCrossCorrelationVector:
    def test_training_row_gives_one(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(size=(7, 2))
        p = CorrelationParams(ranges=[0.6, 0.9])
        r = cross_correlation_vector(X[4], X, p)
        assert r[4] == pytest.approx(1.0)

    def test_far_field_decay(self):
        rng = np.random.default_rng(6)
        X = rng.uniform(size=(5, 2))
        p = CorrelationParams(ranges=[0.05, 0.05])
        r = cross_correlation_vector(np.array([50.0, 50.0]), X, p)
        assert np.all(r < 1e-6)

    def test_matches_elementwise_loop(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(size=(9, 3))
        x0 = rng.uniform(size=3)
        p = CorrelationParams(ranges=[0.4, 1.2, 0.8])
        r = cross_correlation_vector(x0, X, p)
        oracle = np.array([product_correlation(x0, row, p) for row in X])
        assert np.max(np.abs(r - oracle)) < 1e-14


class TestWhiten:
    def test_identity_correlation(self):
        n = 6
        R = correlation_matrix(np.linspace(0, 100, n)[:, None],
                               CorrelationParams(ranges=[1e-3]), jitter=0.0)
        # widely separated points: R is numerically the identity
        M = np.random.default_rng(0).normal(size=(n, 3))
        S = whiten(R, M)
        assert np.allclose(S, M, atol=1e-9)

    def test_quadratic_form_matches_direct_solve(self):
        rng = np.random.default_rng(11)
        X = rng.uniform(size=(12, 2))
        R = correlation_matrix(X, CorrelationParams(ranges=[0.25, 0.25]))
        m = rng.normal(size=(12, 1))
        S = whiten(R, m)
        Rj = R.values + R.jitter * np.eye(12)
        oracle = (m.T @ np.linalg.solve(Rj, m)).item()
        assert (S.T @ S).item() == pytest.approx(oracle, abs=1e-10)

    def test_zero_matrix(self):
        X = np.random.default_rng(1).uniform(size=(4, 1))
        R = correlation_matrix(X, CorrelationParams(ranges=[0.5]))
        assert np.all(whiten(R, np.zeros((4, 2))) == 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_quadratic_form_invariance_random_spd_instances(self, seed):
        from scipy.linalg import cholesky as dense_chol

        from mfcokrig.kernels import CorrelationMatrix

        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 50))
        A = rng.normal(size=(n, n))
        C = A @ A.T + n * np.eye(n)
        d = np.sqrt(np.diag(C))
        C = C / np.outer(d, d)
        R = CorrelationMatrix(values=C, jitter=0.0, chol=dense_chol(C, lower=True))
        M = rng.normal(size=(n, 4))
        S = whiten(R, M)
        oracle = M.T @ np.linalg.solve(C, M)
        assert np.max(np.abs(S.T @ S - oracle)) <= 1e-9
