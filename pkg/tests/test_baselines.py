"""Tests for the classical cross-fitted baselines."""

from dataclasses import dataclass

import numpy as np
import pytest

from src.baselines import (
    BaselineKind,
    BaselineMethod,
    CrossFitPlan,
    LogisticPropensity,
    OlsOutcome,
    OracleOutcome,
    OraclePropensity,
    RidgeOutcome,
    estimate_aipw,
    estimate_g,
    estimate_ipw,
    run_baseline,
)
from src.exceptions import BaselineFitError
from src.model_gen import Dataset, ModelSpec, generate


@dataclass(frozen=True)
class Constant:
    value: float

    def fit(self, data):
        return lambda X: np.full(X.shape[0], self.value)


@pytest.fixture
def small_data(unit_spec):
    return generate(unit_spec, 300, seed=9)


class TestBaselineMethod:
    def test_parsing(self):
        assert BaselineMethod("aipw-3f").kind == BaselineKind.AIPW
        assert BaselineMethod("aipw-3f").folds == 3
        assert BaselineMethod.G_1F.folds == 1

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            BaselineMethod("g-4f")


class TestCrossFitPlan:
    @pytest.mark.parametrize("folds", [2, 3])
    def test_balanced_folds(self, folds):
        labels = CrossFitPlan(folds, seed=3).assignments(101)
        sizes = np.bincount(labels)
        assert sizes.size == folds
        assert sizes.max() - sizes.min() <= 1

    def test_seeded(self):
        first = CrossFitPlan(3, seed=7).assignments(50)
        second = CrossFitPlan(3, seed=7).assignments(50)
        np.testing.assert_array_equal(first, second)

    def test_large_seed_accepted(self):
        CrossFitPlan(2, seed=2**63 + 5).assignments(10)

    def test_role_permutations(self):
        assert CrossFitPlan(1).role_permutations() == [(0, 0, 0)]
        assert CrossFitPlan(2).role_permutations() == [(0, 0, 1), (1, 1, 0)]
        roles = CrossFitPlan(3).role_permutations()
        assert len(roles) == 6
        assert all(sorted(r) == [0, 1, 2] for r in roles)

    def test_invalid_folds(self):
        with pytest.raises(ValueError):
            CrossFitPlan(4)


class TestEstimates:
    def test_g_with_constant_outcome(self, small_data):
        assert estimate_g(small_data, Constant(2.5), CrossFitPlan(2, seed=1)) == pytest.approx(2.5)

    @pytest.mark.parametrize("folds", [1, 2, 3])
    def test_aipw_without_missingness_is_sample_mean(self, small_data, folds):
        full = Dataset(small_data.X, small_data.y, np.ones(small_data.n))
        value = estimate_aipw(full, OlsOutcome(), Constant(1.0), CrossFitPlan(folds, seed=4))
        assert value == pytest.approx(full.y.mean(), abs=1e-12)

    @pytest.mark.parametrize("folds", [1, 3])
    def test_aipw_with_zero_outcome_is_ipw(self, small_data, unit_spec, folds):
        plan = CrossFitPlan(folds, seed=4)
        propensity = OraclePropensity(unit_spec)
        aipw = estimate_aipw(small_data, Constant(0.0), propensity, plan)
        assert aipw == pytest.approx(estimate_ipw(small_data, propensity, plan), abs=1e-12)

    def test_oracle_ipw_hand_computed(self, small_data, unit_spec):
        pi = unit_spec.link(small_data.X[:, 0])
        expected = np.mean(small_data.observed_outcomes / pi)
        value = estimate_ipw(small_data, OraclePropensity(unit_spec), CrossFitPlan(1))
        assert value == pytest.approx(expected)

    def test_oracle_outcome_g(self, small_data, unit_spec):
        value = estimate_g(small_data, OracleOutcome(unit_spec), CrossFitPlan(1))
        assert value == pytest.approx(small_data.X[:, 0].mean())

    def test_ridge_and_logistic_fitters(self, unit_spec):
        data = generate(unit_spec, 1000, seed=12)
        value = run_baseline("aipw-2f", data, RidgeOutcome(lam=0.1), LogisticPropensity(), seed=5)
        assert np.isfinite(value)

    def test_fit_failure_names_fold(self, unit_spec):
        data = generate(unit_spec, 30, seed=2)  # fewer observed units than p per fold
        with pytest.raises(BaselineFitError, match="fold"):
            run_baseline("g-2f", data, OlsOutcome(), LogisticPropensity(), seed=1)


@pytest.mark.slow
def test_consistency_regime_bias_pattern():
    """G and every AIPW variant are unbiased, IPW with the fitted link is biased at p/n = 0.07."""
    spec = ModelSpec.unit_signal(70, sigma=1.0)
    estimates = {method: [] for method in ("g-1f", "aipw-1f", "aipw-2f", "aipw-3f", "ipw-1f")}
    for rep in range(300):
        data = generate(spec, 1000, seed=rep)
        outcome = OlsOutcome()
        propensity = LogisticPropensity(spec.link)
        for method, values in estimates.items():
            values.append(run_baseline(method, data, outcome, propensity, seed=rep))

    def z(method):
        values = np.asarray(estimates[method])
        return (values.mean() - spec.mu_out) / (values.std(ddof=1) / np.sqrt(values.size))

    assert abs(z("g-1f")) <= 3
    for method in ("aipw-1f", "aipw-2f", "aipw-3f"):
        assert abs(z(method)) <= 3, method
    assert abs(z("ipw-1f")) >= 5
