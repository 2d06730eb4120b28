"""Unit tests for numerical helpers."""

import numpy as np
import pytest

from src.utils import (
    bivariate_gaussian_expectation,
    clamp_to_spd,
    gauss_hermite,
    gaussian_expectation,
    is_identity,
    make_rng,
    replicate_seed,
    symmetric_sqrt,
)


class TestGaussHermite:
    def test_weights_are_probabilities(self):
        rule = gauss_hermite(129)
        assert rule.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(rule.weights >= 0)

    def test_low_moments_exact(self):
        rule = gauss_hermite(129)
        assert rule.weights @ rule.nodes == pytest.approx(0.0, abs=1e-12)
        assert rule.weights @ rule.nodes**2 == pytest.approx(1.0, abs=1e-12)
        assert rule.weights @ rule.nodes**4 == pytest.approx(3.0, abs=1e-10)

    def test_read_only(self):
        rule = gauss_hermite(65)
        with pytest.raises(ValueError):
            rule.nodes[0] = 0.0

    def test_rejects_tiny_order(self):
        with pytest.raises(ValueError):
            gauss_hermite(1)

    def test_shifted_scaled_expectation(self):
        assert gaussian_expectation(lambda z: z**2, 1.0, 2.0) == pytest.approx(5.0, rel=1e-12)

    def test_bivariate_cross_moment(self):
        cov = np.array([[1.0, 0.3], [0.3, 2.0]])
        value = bivariate_gaussian_expectation(lambda a, b: a * b, np.array([0.5, -1.0]), cov)
        assert value == pytest.approx(0.3 + 0.5 * -1.0, abs=1e-10)

    def test_bivariate_degenerate_covariance_is_clamped(self):
        cov = np.array([[1.0, 1.0], [1.0, 1.0]])
        value = bivariate_gaussian_expectation(lambda a, b: a * b, np.zeros(2), cov)
        assert value == pytest.approx(1.0, abs=1e-6)


class TestRandomStreams:
    def test_same_key_same_draws(self):
        a = make_rng(42, 3, 7).standard_normal(5)
        b = make_rng(42, 3, 7).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_different_keys_differ(self):
        a = make_rng(42, 3, 7).standard_normal(5)
        b = make_rng(42, 3, 8).standard_normal(5)
        assert not np.array_equal(a, b)

    def test_rejects_negative_seed(self):
        with pytest.raises(ValueError):
            make_rng(-1)

    def test_replicate_seed_is_xor(self):
        assert replicate_seed(5, 3) == 6
        assert replicate_seed(2**63, 1) == 2**63 + 1


class TestMatrixHelpers:
    def test_symmetric_sqrt(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((6, 6))
        M = A @ A.T + 6 * np.eye(6)
        root, inv_root = symmetric_sqrt(M)
        np.testing.assert_allclose(root @ root, M, atol=1e-10)
        np.testing.assert_allclose(root @ inv_root, np.eye(6), atol=1e-10)

    def test_symmetric_sqrt_rejects_indefinite(self):
        with pytest.raises(ValueError):
            symmetric_sqrt(np.diag([1.0, -1.0]))

    def test_symmetric_sqrt_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            symmetric_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_clamp_floors_eigenvalues(self):
        clamped = clamp_to_spd(np.array([[1.0, 1.0], [1.0, 1.0]]), floor=1e-6)
        assert np.linalg.eigvalsh(clamped).min() >= 1e-6 - 1e-12

    def test_clamp_rejects_nan(self):
        with pytest.raises(ValueError):
            clamp_to_spd(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    def test_is_identity(self):
        assert is_identity(np.eye(3))
        assert not is_identity(2 * np.eye(3))
        assert not is_identity(np.ones(3))


@pytest.mark.slow
class TestQuadratureAgainstSampling:
    DRAWS = 4_000_000

    def test_one_dimensional_link_moments(self, link):
        rng = np.random.default_rng(2024)
        z = 0.3 + 1.2 * rng.standard_normal(self.DRAWS)
        pi, d1, d2 = link.derivatives(z)
        for sample, fn in ((pi, link), (d1, link.derivative), (d2, link.second_derivative)):
            se = sample.std() / np.sqrt(self.DRAWS)
            assert gaussian_expectation(fn, 0.3, 1.2) == pytest.approx(sample.mean(), abs=4 * se)

    def test_bivariate_correlated_integrand(self, link):
        mean = np.array([0.2, -0.4])
        cov = np.array([[1.3, 0.7], [0.7, 0.9]])
        rng = np.random.default_rng(2025)
        draws = rng.multivariate_normal(mean, cov, size=self.DRAWS)
        sample = link.derivative(draws[:, 0]) * np.tanh(draws[:, 1])
        se = sample.std() / np.sqrt(self.DRAWS)
        value = bivariate_gaussian_expectation(lambda z1, z2: link.derivative(z1) * np.tanh(z2), mean, cov)
        assert value == pytest.approx(sample.mean(), abs=4 * se)
