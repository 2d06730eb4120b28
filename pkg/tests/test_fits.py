"""Tests for the outcome and propensity base estimators."""

import numpy as np
import pytest
from scipy.special import expit

from src.exceptions import ConvergenceError, SeparationError, SingularDesignError
from src.fits import (
    InverseProbabilityWeights,
    LossKind,
    Penalty,
    PropensityLoss,
    dof_adjusted_ipw_weights,
    fit_logistic_unpenalized,
    fit_ols,
    fit_outcome,
    fit_propensity_m,
    fit_propensity_moment,
    ipw_weights,
)
from src.model_gen import Dataset, LinkFunction, ModelSpec, generate


class TestPenalty:
    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            Penalty.ridge(0.0)

    def test_ridge_derivatives(self):
        penalty = Penalty.ridge(2.0)
        v = np.array([1.0, -2.0])
        assert penalty.value(v) == pytest.approx(5.0)
        np.testing.assert_array_equal(penalty.gradient(v), [2.0, -4.0])
        np.testing.assert_array_equal(penalty.hessian_eigenvalues(3), [2.0, 2.0, 2.0])


class TestPropensityLoss:
    def test_shifted_square_prox_closed_form(self):
        loss = PropensityLoss()
        t = np.array([-1.0, 0.0, 2.0])
        np.testing.assert_allclose(loss.prox(t, 0.5, 1.0), (t + 0.25) / 1.5)
        np.testing.assert_allclose(loss.prox(t, 0.5, 0.0), (t - 0.25) / 1.5)

    def test_prox_with_zero_scale_is_identity(self):
        t = np.array([0.3, -0.7])
        np.testing.assert_array_equal(PropensityLoss(LossKind.LOGISTIC).prox(t, 0.0, 1.0), t)

    def test_logistic_prox_solves_stationarity(self):
        loss = PropensityLoss(LossKind.LOGISTIC)
        t = np.linspace(-5, 5, 11)
        v = loss.prox(t, 2.0, 1.0)
        np.testing.assert_allclose(v - t + 2.0 * (expit(v) - 1.0), 0.0, atol=1e-12)

    def test_derivatives(self):
        loss = PropensityLoss(LossKind.LOGISTIC)
        eta = np.linspace(-3, 3, 7)
        a = np.ones(7)
        h = 1e-5
        np.testing.assert_allclose(
            loss.d1(eta, a), (loss.value(eta + h, a) - loss.value(eta - h, a)) / (2 * h), atol=1e-8
        )
        np.testing.assert_allclose(
            loss.d3(eta, a), (loss.d2(eta + h, a) - loss.d2(eta - h, a)) / (2 * h), atol=1e-8
        )


class TestWeights:
    def test_ipw(self, link):
        weights = ipw_weights(link)
        assert float(weights(np.array(0.0))) == pytest.approx(1.0 / 0.55)

    def test_dof_adjusted(self, link):
        weights = dof_adjusted_ipw_weights(link, 0.05)
        assert float(weights(np.array(0.0))) == pytest.approx(1.0 / 0.5)

    def test_omega_must_stay_below_floor(self, link):
        with pytest.raises(ValueError, match="floor"):
            InverseProbabilityWeights(link, 0.1)
        with pytest.raises(ValueError):
            InverseProbabilityWeights(link, -0.01)
        with pytest.raises(ValueError):
            dof_adjusted_ipw_weights(link, 0.0)


class TestFitOutcome:
    def test_kkt(self, wide_data):
        fit = fit_outcome(wide_data, Penalty.ridge(1.0))
        assert fit.kkt_residual <= 1e-10
        assert fit.penalty_lambda == 1.0
        np.testing.assert_allclose(
            fit.linear_predictor, fit.intercept + wide_data.X @ fit.coef, atol=1e-12
        )

    def test_unobserved_outcomes_never_read(self, wide_data):
        scrambled = Dataset(
            wide_data.X,
            np.where(wide_data.a == 1.0, wide_data.y, 1e6),
            wide_data.a,
        )
        first = fit_outcome(wide_data, Penalty.ridge(0.5))
        second = fit_outcome(scrambled, Penalty.ridge(0.5))
        np.testing.assert_array_equal(first.coef, second.coef)
        assert first.intercept == second.intercept

    def test_weighted_fit(self, wide_spec, wide_data):
        weights = ipw_weights(wide_spec.link)
        fit = fit_outcome(
            wide_data, Penalty.ridge(1.0), weights, (wide_spec.theta_prop0, wide_spec.theta_prop)
        )
        assert fit.kkt_residual <= 1e-10
        np.testing.assert_allclose(fit.weights, 1.0 / wide_spec.link(wide_data.X[:, 0]))

    def test_weighted_fit_needs_true_propensity(self, wide_spec, wide_data):
        with pytest.raises(ValueError):
            fit_outcome(wide_data, Penalty.ridge(1.0), ipw_weights(wide_spec.link))

    def test_needs_observed_units(self):
        data = Dataset(np.ones((3, 2)), np.zeros(3), np.zeros(3))
        with pytest.raises(ValueError):
            fit_outcome(data, Penalty.ridge(1.0))

    def test_to_csv(self, wide_data, tmp_path):
        fit = fit_outcome(wide_data, Penalty.ridge(1.0))
        path = tmp_path / "fit.csv"
        fit.to_csv(path)
        header, row = path.read_text().splitlines()
        assert header.split(",")[:2] == ["intercept", "coef_0"]
        assert float(row.split(",")[0]) == fit.intercept


class TestFitPropensity:
    @pytest.mark.parametrize("kind", list(LossKind))
    def test_kkt(self, wide_data, kind):
        fit = fit_propensity_m(wide_data, Penalty.ridge(1.0), PropensityLoss(kind))
        assert fit.kkt_residual <= 1e-10
        assert fit.iterations >= 1

    def test_shifted_square_closed_form(self, wide_data):
        lam = 0.7
        fit = fit_propensity_m(wide_data, Penalty.ridge(lam))
        n, p = wide_data.X.shape
        design = np.column_stack([np.ones(n), wide_data.X])
        hess = design.T @ design / (2 * n) + np.diag(np.r_[0.0, np.full(p, lam)])
        expected = np.linalg.solve(hess, design.T @ (wide_data.a - 0.5) / (2 * n))
        np.testing.assert_allclose(np.r_[fit.intercept, fit.coef], expected, atol=1e-9)

    def test_iteration_cap(self, wide_data):
        with pytest.raises(ConvergenceError) as info:
            fit_propensity_m(wide_data, Penalty.ridge(1.0), PropensityLoss(LossKind.LOGISTIC), max_iter=1)
        assert info.value.iterations == 1

    def test_moment_method(self):
        X = np.array([[1.0, 0.0], [3.0, 2.0], [2.0, 4.0]])
        data = Dataset(X, np.zeros(3), np.array([1.0, 1.0, 0.0]))
        coef, n1 = fit_propensity_moment(data)
        assert n1 == 2
        np.testing.assert_allclose(coef, [2.0 - 2.0, 1.0 - 2.0])

    def test_moment_method_needs_observations(self):
        data = Dataset(np.ones((2, 2)), np.zeros(2), np.zeros(2))
        with pytest.raises(ValueError):
            fit_propensity_moment(data)


class TestBaselineFits:
    def test_ols_recovers_noiseless_model(self):
        spec = ModelSpec.unit_signal(4, theta_out0=0.5, sigma=0.0)
        data = generate(spec, 200, seed=3)
        fit = fit_ols(data)
        assert fit.intercept == pytest.approx(0.5, abs=1e-10)
        np.testing.assert_allclose(fit.coef, spec.theta_out, atol=1e-10)

    def test_ols_needs_more_than_p_observed(self):
        data = Dataset(np.eye(3), np.ones(3), np.array([1.0, 1.0, 0.0]))
        with pytest.raises(SingularDesignError):
            fit_ols(data)

    def test_logistic_separation(self):
        x = np.linspace(-3, 3, 40)
        data = Dataset(x[:, None], np.zeros(40), (x > 0).astype(float))
        with pytest.raises(SeparationError):
            fit_logistic_unpenalized(data)

    def test_offset_link_mle(self):
        link = LinkFunction.offset_logistic(0.1)
        spec = ModelSpec.unit_signal(3, theta_prop0=0.3, link=link)
        data = generate(spec, 5000, seed=8)
        fit = fit_logistic_unpenalized(data, link)
        assert fit.kkt_residual <= 1e-10
        assert fit.intercept == pytest.approx(0.3, abs=0.2)
        assert fit.coef[0] == pytest.approx(1.0, abs=0.2)
