"""Classical G-computation, IPW and AIPW estimates of µ_out with cross-fitting.

With nuisance fits ``µ̂`` (outcome) and ``π̂`` (propensity) learned on one
part of the sample, the estimates average over a held-out part:

    G:    mean µ̂(x_i)
    IPW:  mean a_i y_i / π̂(x_i)
    AIPW: mean µ̂(x_i) + a_i (y_i − µ̂(x_i)) / π̂(x_i)

One fold uses all data for fitting and averaging; two folds swap the halves;
three folds run every assignment of (outcome, propensity, evaluation) roles
to the thirds. Role estimates are averaged.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from itertools import permutations
from typing import Callable, Optional, Protocol

import numpy as np
from loguru import logger
from sklearn.model_selection import KFold

from src.exceptions import BaselineFitError, EstimationError
from src.fits import Penalty, fit_logistic_unpenalized, fit_ols, fit_outcome
from src.model_gen import Dataset, LinkFunction, ModelSpec

PROPENSITY_CLAMP = 1e-6

Predictor = Callable[[np.ndarray], np.ndarray]


class BaselineKind(str, Enum):
    G = "g"
    IPW = "ipw"
    AIPW = "aipw"


class BaselineMethod(str, Enum):
    G_1F = "g-1f"
    G_2F = "g-2f"
    AIPW_1F = "aipw-1f"
    AIPW_2F = "aipw-2f"
    AIPW_3F = "aipw-3f"
    IPW_1F = "ipw-1f"
    IPW_2F = "ipw-2f"
    IPW_3F = "ipw-3f"

    @property
    def kind(self) -> BaselineKind:
        return BaselineKind(self.value.split("-")[0])

    @property
    def folds(self) -> int:
        return int(self.value.split("-")[1][0])


class OutcomeFitter(Protocol):
    def fit(self, data: Dataset) -> Predictor: ...


class PropensityFitter(Protocol):
    def fit(self, data: Dataset) -> Predictor: ...


def _linear(intercept: float, coef: np.ndarray) -> Predictor:
    return lambda X: intercept + X @ coef


@dataclass(frozen=True)
class OlsOutcome:
    """Least squares on the observed units."""

    def fit(self, data: Dataset) -> Predictor:
        result = fit_ols(data)
        return _linear(result.intercept, result.coef)


@dataclass(frozen=True)
class RidgeOutcome:
    """Ridge on the observed units with a fixed λ."""

    lam: float = 1.0

    def fit(self, data: Dataset) -> Predictor:
        result = fit_outcome(data, Penalty.ridge(self.lam))
        return _linear(result.intercept, result.coef)


@dataclass(frozen=True)
class LogisticPropensity:
    """Unpenalized Bernoulli MLE; ``link=None`` is ordinary logistic regression."""

    link: Optional[LinkFunction] = None

    def fit(self, data: Dataset) -> Predictor:
        result = fit_logistic_unpenalized(data, self.link)
        link = self.link or LinkFunction.pure_logistic()
        return lambda X: link(result.intercept + X @ result.coef)


@dataclass(frozen=True)
class OraclePropensity:
    spec: ModelSpec

    def fit(self, data: Dataset) -> Predictor:
        spec = self.spec
        return lambda X: spec.link(spec.theta_prop0 + X @ spec.theta_prop)


@dataclass(frozen=True)
class OracleOutcome:
    spec: ModelSpec

    def fit(self, data: Dataset) -> Predictor:
        return _linear(self.spec.theta_out0, self.spec.theta_out)


@dataclass(frozen=True)
class CrossFitPlan:
    """Seeded fold assignment.

    Attributes:
        folds: 1, 2 or 3
        seed: Seed of the shuffled split
    """

    folds: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.folds not in (1, 2, 3):
            raise ValueError(f"Cross-fitting supports 1, 2 or 3 folds, got {self.folds}")

    def assignments(self, n: int) -> np.ndarray:
        """Fold label of every unit; fold sizes differ by at most one."""
        labels = np.zeros(n, dtype=int)
        if self.folds == 1:
            return labels
        if n < self.folds:
            raise ValueError(f"Cannot split {n} units into {self.folds} folds")
        kfold = KFold(n_splits=self.folds, shuffle=True, random_state=self.seed % 2**32)
        for label, (_, held_out) in enumerate(kfold.split(np.arange(n))):
            labels[held_out] = label
        return labels

    def role_permutations(self) -> list[tuple[int, int, int]]:
        """``(outcome fold, propensity fold, evaluation fold)`` triples."""
        if self.folds == 1:
            return [(0, 0, 0)]
        if self.folds == 2:
            return [(0, 0, 1), (1, 1, 0)]
        return list(permutations(range(3)))


class _FoldFits:
    """Nuisance fits per fold, each computed once."""

    def __init__(self, data: Dataset, labels: np.ndarray) -> None:
        self.data = data
        self.labels = labels
        self._cache: dict[tuple[str, int], Predictor] = {}

    def part(self, fold: int) -> Dataset:
        return self.data.subset(np.flatnonzero(self.labels == fold))

    def fitted(self, role: str, fitter: OutcomeFitter | PropensityFitter, fold: int) -> Predictor:
        key = (role, fold)
        if key not in self._cache:
            try:
                self._cache[key] = fitter.fit(self.part(fold))
            except (EstimationError, ValueError, np.linalg.LinAlgError) as e:
                raise BaselineFitError(f"{role} fit failed on fold {fold}: {e}") from e
        return self._cache[key]


def _propensity(predict: Predictor, X: np.ndarray) -> np.ndarray:
    return np.maximum(predict(X), PROPENSITY_CLAMP)


def _estimate(
    kind: BaselineKind,
    data: Dataset,
    plan: CrossFitPlan,
    outcome_fitter: Optional[OutcomeFitter],
    propensity_fitter: Optional[PropensityFitter],
) -> float:
    labels = plan.assignments(data.n)
    fits = _FoldFits(data, labels)
    values = []
    for mu_fold, pi_fold, eval_fold in plan.role_permutations():
        held_out = fits.part(eval_fold)
        ay = held_out.observed_outcomes
        if kind == BaselineKind.G:
            mu = fits.fitted("outcome", outcome_fitter, mu_fold)(held_out.X)
            values.append(float(mu.mean()))
        elif kind == BaselineKind.IPW:
            pi = _propensity(fits.fitted("propensity", propensity_fitter, pi_fold), held_out.X)
            values.append(float(np.mean(ay / pi)))
        else:
            mu = fits.fitted("outcome", outcome_fitter, mu_fold)(held_out.X)
            pi = _propensity(fits.fitted("propensity", propensity_fitter, pi_fold), held_out.X)
            values.append(float(np.mean(mu + (ay - held_out.a * mu) / pi)))
    return float(np.mean(values))


def estimate_g(data: Dataset, outcome_fitter: OutcomeFitter, plan: CrossFitPlan) -> float:
    return _estimate(BaselineKind.G, data, plan, outcome_fitter, None)


def estimate_ipw(data: Dataset, propensity_fitter: PropensityFitter, plan: CrossFitPlan) -> float:
    return _estimate(BaselineKind.IPW, data, plan, None, propensity_fitter)


def estimate_aipw(
    data: Dataset,
    outcome_fitter: OutcomeFitter,
    propensity_fitter: PropensityFitter,
    plan: CrossFitPlan,
) -> float:
    """AIPW estimate; reduces to IPW when ``µ̂ ≡ 0`` and to ``ȳ`` when ``π̂ ≡ 1, a ≡ 1``."""
    return _estimate(BaselineKind.AIPW, data, plan, outcome_fitter, propensity_fitter)


def run_baseline(
    method: BaselineMethod | str,
    data: Dataset,
    outcome_fitter: OutcomeFitter,
    propensity_fitter: PropensityFitter,
    seed: int,
) -> float:
    """Evaluate one named baseline with the plan implied by its fold count.

    Raises:
        BaselineFitError: If a nuisance fit fails on some fold
    """
    method = BaselineMethod(method)
    plan = CrossFitPlan(method.folds, seed)
    logger.debug(f"Baseline {method.value} on n={data.n}")
    if method.kind == BaselineKind.G:
        return estimate_g(data, outcome_fitter, plan)
    if method.kind == BaselineKind.IPW:
        return estimate_ipw(data, propensity_fitter, plan)
    return estimate_aipw(data, outcome_fitter, propensity_fitter, plan)
