"""Tests for the analytic bias predictions."""

import numpy as np
import pytest

from src.debias import DebiasMethod
from src.dof import DofAdjustments
from src.model_gen import LinkFunction, ModelSpec, generate
from src.pipeline import EstimationPipeline
from src.theory import (
    FailureSign,
    WeightScheme,
    alphas_zeta,
    dof_ipw_bias_bound,
    failure_score,
    modified_propensity,
    population_summary,
    predict_bias,
    predict_failure_region,
)


def _spec(theta_out, theta_prop):
    p = len(theta_out)
    return ModelSpec(
        theta_out0=0.0,
        theta_out=np.asarray(theta_out, dtype=float),
        theta_prop0=0.0,
        theta_prop=np.asarray(theta_prop, dtype=float),
        mu_x=np.zeros(p),
        sigma_matrix=np.eye(p),
        sigma=1.0,
        link=LinkFunction.offset_logistic(0.1),
    )


class TestModifiedPropensity:
    @pytest.mark.parametrize(
        "scheme, omega, lam",
        [
            (WeightScheme.UNIT, 0.0, 1.0),
            (WeightScheme.IPW, 0.0, 1.0),
            (WeightScheme.DOF_ADJUSTED_IPW, 0.05, 2.0),
        ],
    )
    def test_derivatives_match_finite_differences(self, link, scheme, omega, lam):
        eta = np.linspace(-3, 3, 13)
        h = 1e-5

        def value(e):
            return modified_propensity(e, link, 0.7, scheme, omega, lam)[0]

        def slope(e):
            return modified_propensity(e, link, 0.7, scheme, omega, lam)[1]

        _, d1, d2 = modified_propensity(eta, link, 0.7, scheme, omega, lam)
        np.testing.assert_allclose(d1, (value(eta + h) - value(eta - h)) / (2 * h), atol=1e-8)
        np.testing.assert_allclose(d2, (slope(eta + h) - slope(eta - h)) / (2 * h), atol=1e-7)

    def test_ipw_hand_computed(self, link):
        pi = float(link(0.0))
        value = modified_propensity(np.array(0.0), link, 0.5, WeightScheme.IPW)[0]
        # ζw/(1 + ζw)·π with w = 1/π
        assert float(value) == pytest.approx((0.5 / pi) / (1 + 0.5 / pi) * pi)

    def test_dof_scheme_hand_computed(self, link):
        pi = float(link(0.0))
        lam, omega, zeta = 2.0, 0.05, 0.8
        weight = (1.0 / lam) / (pi - omega)
        value = modified_propensity(np.array(0.0), link, zeta, WeightScheme.DOF_ADJUSTED_IPW, omega, lam)[0]
        assert float(value) == pytest.approx(zeta * weight / (1 + zeta * weight) * pi)


class TestAlphas:
    def test_unit_scheme_ignores_zeta(self):
        spec = ModelSpec.unit_signal(5, theta_prop0=0.4)
        assert alphas_zeta(spec, 0.1) == pytest.approx(alphas_zeta(spec, 5.0), rel=1e-12)

    def test_unit_scheme_matches_population(self):
        spec = ModelSpec.unit_signal(5, theta_prop0=0.4)
        pop = population_summary(spec)
        alpha1, alpha2 = alphas_zeta(spec, 0.3)
        assert alpha1 == pytest.approx(pop.alpha1_hat, rel=1e-12)
        assert alpha2 == pytest.approx(pop.alpha2_hat, rel=1e-12)

    def test_ipw_scheme_approaches_population_for_large_zeta(self):
        spec = ModelSpec.unit_signal(5)
        pop = population_summary(spec)
        alpha1, _ = alphas_zeta(spec, 1e8, WeightScheme.IPW)
        assert alpha1 == pytest.approx(pop.alpha1_hat, rel=1e-6)

    def test_population_summary_gamma_star(self):
        spec = ModelSpec.unit_signal(5)
        pop = population_summary(spec)
        assert pop.gamma_prop_star_hat == pytest.approx(pop.alpha1_hat)
        assert pop.gamma_mu_hat == 0.0


class TestPredictBias:
    def test_population_adjustment_removes_bias(self):
        spec = ModelSpec.unit_signal(10, theta_prop0=-0.3)
        pop = population_summary(spec)
        prediction = predict_bias(spec, 0.4, pop.alpha1_hat, pop.sc_sigma_hat)
        assert prediction.bias1 == pytest.approx(0.0, abs=1e-12)
        assert prediction.bias2 == pytest.approx(0.0, abs=1e-12)
        assert prediction.mean_bias(0.8) == pytest.approx(0.0, abs=1e-12)

    def test_naive_bias_is_alpha1(self):
        spec = ModelSpec.unit_signal(10)
        pop = population_summary(spec)
        prediction = predict_bias(spec, 0.4, 0.0, 0.0)
        assert prediction.bias1 == pytest.approx(pop.alpha1_hat)
        assert prediction.mean_bias(0.5) == pytest.approx(0.5 * pop.alpha1_hat)

    def test_ipw_weighting_shrinks_alpha1(self):
        spec = ModelSpec.unit_signal(10)
        unit = predict_bias(spec, 0.4, 0.0, 0.0)
        weighted = predict_bias(spec, 0.4, 0.0, 0.0, WeightScheme.IPW)
        assert abs(weighted.alpha1_zeta) < abs(unit.alpha1_zeta)


class TestFailureRegion:
    def test_aligned_directions_bias_positive(self):
        spec = ModelSpec.unit_signal(50)
        assert predict_failure_region(spec, 1.0, 100) == FailureSign.BIASED_POSITIVE

    def test_opposite_directions_bias_negative(self):
        spec = ModelSpec.unit_signal(50, outcome_sign=-1.0)
        assert predict_failure_region(spec, 1.0, 100) == FailureSign.BIASED_NEGATIVE

    def test_weak_orthogonal_signal_is_indeterminate(self):
        theta_out = np.zeros(50)
        theta_out[1] = 1.0
        theta_prop = np.zeros(50)
        theta_prop[0] = 0.1
        spec = _spec(theta_out, theta_prop)
        assert predict_failure_region(spec, 1.0, 100) == FailureSign.INDETERMINATE

    def test_score_with_fitted_zeta(self):
        spec = ModelSpec.unit_signal(50)
        assert failure_score(spec, 1.0, 1.0) == pytest.approx(1.5)
        assert predict_failure_region(spec, 1.0, 100, zeta_theta=1.0) == FailureSign.BIASED_POSITIVE


class TestDofIpwBound:
    def test_vanishes_when_zeta_matches_omega(self):
        spec = ModelSpec.unit_signal(5)
        dof = DofAdjustments(zeta_theta=0.5, zeta_eta=2.0 * 0.05, iterations=1, residual=0.0)
        assert dof_ipw_bias_bound(spec, 2.0, 0.05, dof) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("omega", [0.0, 0.1, 0.2])
    def test_omega_range(self, omega):
        spec = ModelSpec.unit_signal(5)
        dof = DofAdjustments(zeta_theta=0.5, zeta_eta=0.1, iterations=1, residual=0.0)
        with pytest.raises(ValueError):
            dof_ipw_bias_bound(spec, 1.0, omega, dof)


@pytest.mark.slow
def test_naive_bias_prediction_matches_simulation():
    """The analytic naive-debiasing bias tracks the simulated bias at p/n = 1.25."""
    spec = ModelSpec.unit_signal(500, sigma=0.2)
    simulated, predicted = [], []
    for rep in range(100):
        pipeline = EstimationPipeline(generate(spec, 400, seed=rep), 1.0, spec.link, spec=spec)
        report = pipeline.run(DebiasMethod.NAIVE)
        simulated.append(report.mu_out_de - spec.mu_out)
        predicted.append(pipeline.predicted(DebiasMethod.NAIVE).mean_bias(pipeline.alignment()))
    simulated, predicted = np.mean(simulated), np.asarray(predicted)
    assert np.all(predicted > 0)
    assert simulated > 0
    assert abs(simulated - predicted.mean()) <= 0.15 * abs(predicted.mean())
