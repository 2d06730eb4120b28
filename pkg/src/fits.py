"""Base estimators for the outcome and propensity models.

Outcome: ridge-penalized weighted least squares on the observed units.
Propensity: penalized M-estimation (Newton) or the moment method.
Baselines: unpenalized OLS on observed units and binary maximum likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd
from loguru import logger
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lstsq
from scipy.special import expit

from src.exceptions import ConvergenceError, SeparationError, SingularDesignError
from src.model_gen import Dataset, LinkFunction

WeightFn = Callable[[np.ndarray], np.ndarray]

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 100


class PenaltyKind(str, Enum):
    RIDGE = "ridge"


@dataclass(frozen=True)
class Penalty:
    """Penalty on the slope coefficients; the intercept is never penalized.

    Attributes:
        lam: Ridge parameter λ > 0, the penalty being ``λ‖v‖²/2``
        kind: Penalty family
    """

    lam: float
    kind: PenaltyKind = PenaltyKind.RIDGE

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ValueError(f"Ridge parameter must be positive, got {self.lam}")

    @classmethod
    def ridge(cls, lam: float) -> Penalty:
        return cls(lam=float(lam))

    def value(self, v: np.ndarray) -> float:
        return 0.5 * self.lam * float(v @ v)

    def gradient(self, v: np.ndarray) -> np.ndarray:
        return self.lam * v

    def hessian(self, p: int) -> np.ndarray:
        return self.lam * np.eye(p)

    def hessian_eigenvalues(self, p: int) -> np.ndarray:
        return np.full(p, self.lam)


class LossKind(str, Enum):
    SHIFTED_SQUARE = "shifted-square"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class PropensityLoss:
    """Loss ``ℓ(η; a)`` for the propensity M-estimator.

    shifted-square: ``((a − 1/2) − η)²/2``, strongly convex and informative.
    logistic: ``log(1 + e^η) − aη``, only used to replicate the classical baselines.
    """

    kind: LossKind = LossKind.SHIFTED_SQUARE

    def value(self, eta: np.ndarray, a: np.ndarray) -> np.ndarray:
        if self.kind == LossKind.SHIFTED_SQUARE:
            return 0.5 * ((a - 0.5) - eta) ** 2
        return np.logaddexp(0.0, eta) - a * eta

    def d1(self, eta: np.ndarray, a: np.ndarray) -> np.ndarray:
        if self.kind == LossKind.SHIFTED_SQUARE:
            return eta - (a - 0.5)
        return expit(eta) - a

    def d2(self, eta: np.ndarray, a: np.ndarray) -> np.ndarray:
        if self.kind == LossKind.SHIFTED_SQUARE:
            return np.ones(np.broadcast(eta, a).shape)
        s = expit(eta)
        return s * (1.0 - s) + 0.0 * a

    def d3(self, eta: np.ndarray, a: np.ndarray) -> np.ndarray:
        if self.kind == LossKind.SHIFTED_SQUARE:
            return np.zeros(np.broadcast(eta, a).shape)
        s = expit(eta)
        return s * (1.0 - s) * (1.0 - 2.0 * s) + 0.0 * a

    def prox(self, t: np.ndarray, zeta: float, a: float) -> np.ndarray:
        """``argmin_v (v − t)²/2 + ζ·ℓ(v; a)`` elementwise."""
        t = np.asarray(t, dtype=float)
        if zeta == 0.0:
            return t.copy()
        if self.kind == LossKind.SHIFTED_SQUARE:
            return (t + zeta * (a - 0.5)) / (1.0 + zeta)
        # monotone scalar equation v − t + ζ(σ(v) − a) = 0, derivative ≥ 1
        v = t.copy()
        for _ in range(100):
            s = expit(v)
            step = (v - t + zeta * (s - a)) / (1.0 + zeta * s * (1.0 - s))
            v = v - step
            if np.max(np.abs(step)) <= 1e-14 * max(1.0, float(np.max(np.abs(v)))):
                break
        return v


@dataclass
class FitResult:
    """Base estimate and its diagnostics.

    Attributes:
        intercept: Fitted intercept
        coef: Fitted slope vector
        residual_score: ``a⊙w⊙(y − η̂)`` for outcome fits, ``ℓ'(η̂; a)`` for
            propensity M-estimates, ``a − π̂`` for binary MLE
        weights: Per-unit weights ``w_i``
        objective_value: Objective at the returned point
        kkt_residual: Max-norm of the stationarity condition
        linear_predictor: ``η̂ = intercept + X·coef``
        iterations: Solver iterations used
        penalty_lambda: Ridge parameter (0 for unpenalized fits)
    """

    intercept: float
    coef: np.ndarray
    residual_score: np.ndarray
    weights: np.ndarray
    objective_value: float
    kkt_residual: float
    linear_predictor: np.ndarray
    iterations: int = 1
    penalty_lambda: float = 0.0

    def to_csv(self, path: str | Path) -> None:
        """Write intercept and coefficients as a single CSV row."""
        columns = ["intercept"] + [f"coef_{j}" for j in range(self.coef.size)]
        row = pd.DataFrame([np.r_[self.intercept, self.coef]], columns=columns)
        row.to_csv(path, index=False, float_format="%.17g")


@dataclass(frozen=True)
class InverseProbabilityWeights:
    """Weight function ``w(η) = 1/(π(η) − ω)``; ``ω = 0`` gives plain IPW.

    Raises:
        ValueError: If ω is not in [0, inf π)
    """

    link: LinkFunction
    omega: float = 0.0

    def __post_init__(self) -> None:
        if self.omega < 0:
            raise ValueError(f"omega must be non-negative, got {self.omega}")
        if self.omega > 0 and self.omega >= self.link.lower:
            raise ValueError(
                f"omega={self.omega} must be below the link floor c0={self.link.lower}"
            )

    def __call__(self, eta: np.ndarray) -> np.ndarray:
        return 1.0 / (self.link(eta) - self.omega)


def ipw_weights(link: LinkFunction) -> InverseProbabilityWeights:
    """``w = 1/π``."""
    return InverseProbabilityWeights(link)


def dof_adjusted_ipw_weights(link: LinkFunction, omega: float) -> InverseProbabilityWeights:
    """``w = 1/(π − ω)`` with ``0 < ω < inf π``."""
    if omega <= 0:
        raise ValueError(f"omega must be positive for the adjusted weights, got {omega}")
    return InverseProbabilityWeights(link, omega)


def outcome_weights(
    data: Dataset,
    weight_fn: Optional[WeightFn] = None,
    true_prop_params: Optional[tuple[float, np.ndarray]] = None,
) -> np.ndarray:
    """Evaluate ``w_i`` at the true propensity linear predictors."""
    if weight_fn is None:
        return np.ones(data.n)
    if true_prop_params is None:
        raise ValueError("A weighted outcome fit needs the true propensity parameters")
    theta0, theta = true_prop_params
    weights = np.asarray(weight_fn(theta0 + data.X @ theta), dtype=float)
    if weights.shape != (data.n,) or not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        raise ValueError("Outcome weights must be finite and positive")
    return weights


def fit_outcome(
    data: Dataset,
    penalty: Penalty,
    weight_fn: Optional[WeightFn] = None,
    true_prop_params: Optional[tuple[float, np.ndarray]] = None,
) -> FitResult:
    """Ridge-penalized weighted least squares on the observed outcomes.

    Minimizes ``(1/2n) Σ a_i w_i (y_i − v₀ − ⟨x_i, v⟩)² + λ‖v‖²/2``. The
    intercept is eliminated in closed form and the slope solves
    ``(X_cᵀ W X_c / n + λI) v = X_cᵀ W y_c / n`` by Cholesky with one step
    of iterative refinement.

    Args:
        data: Sample (only ``a⊙y`` is read)
        penalty: Ridge penalty
        weight_fn: Map from the true propensity linear predictor to weights
        true_prop_params: ``(θ_prop0, θ_prop)`` in the coordinates of ``data``

    Returns:
        FitResult: Fit with ``residual_score = a⊙w⊙(y − η̂)``

    Raises:
        ValueError: If no outcome is observed
        SingularDesignError: If the normal equations cannot be factorized
    """
    n, p = data.n, data.p
    if data.n_observed < 1:
        raise ValueError("Outcome fit needs at least one observed unit")
    weights = outcome_weights(data, weight_fn, true_prop_params)
    y = data.observed_outcomes
    c = data.a * weights
    total = c.sum()

    x_bar = (c @ data.X) / total
    y_bar = float(c @ y) / total
    rows = np.flatnonzero(c)
    Xr = data.X[rows] - x_bar
    cr = c[rows]
    gram = (Xr.T * cr) @ Xr / n
    gram[np.diag_indices(p)] += penalty.lam
    rhs = Xr.T @ (cr * (y[rows] - y_bar)) / n

    try:
        factor = cho_factor(gram, lower=True)
    except LinAlgError as e:
        raise SingularDesignError("Outcome normal equations are singular") from e
    coef = cho_solve(factor, rhs)
    coef = coef + cho_solve(factor, rhs - gram @ coef)
    intercept = y_bar - float(x_bar @ coef)

    eta = intercept + data.X @ coef
    score = c * (y - eta)
    kkt = max(
        float(np.max(np.abs(data.X.T @ score / n - penalty.gradient(coef)), initial=0.0)),
        abs(float(score.sum())) / n,
    )
    objective = 0.5 * float(c @ (y - eta) ** 2) / n + penalty.value(coef)
    logger.debug(f"Outcome ridge fit: n={n}, p={p}, lambda={penalty.lam:g}, kkt={kkt:.2e}")
    return FitResult(
        intercept=intercept,
        coef=coef,
        residual_score=score,
        weights=weights,
        objective_value=objective,
        kkt_residual=kkt,
        linear_predictor=eta,
        penalty_lambda=penalty.lam,
    )


def _with_intercept(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(X.shape[0]), X])


def fit_propensity_m(
    data: Dataset,
    penalty: Penalty,
    loss: PropensityLoss = PropensityLoss(),
    max_iter: int = NEWTON_MAX_ITER,
    tol: float = NEWTON_TOL,
) -> FitResult:
    """Penalized M-estimate of the propensity model.

    Minimizes ``(1/2n) Σ ℓ(v₀ + ⟨x_i, v⟩; a_i) + λ‖v‖²/2`` by Newton's method
    with step-halving until the gradient max-norm is at most ``tol``.

    Raises:
        ConvergenceError: If ``max_iter`` iterations do not reach ``tol``
    """
    n, p = data.n, data.p
    a = data.a
    design = _with_intercept(data.X)
    penalty_diag = np.r_[0.0, np.full(p, penalty.lam)]

    def objective(v: np.ndarray) -> float:
        return float(loss.value(design @ v, a).sum()) / (2 * n) + penalty.value(v[1:])

    v = np.zeros(p + 1)
    if loss.kind == LossKind.SHIFTED_SQUARE:
        v[0] = a.mean() - 0.5
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        eta = design @ v
        grad = design.T @ loss.d1(eta, a) / (2 * n) + penalty_diag * v
        residual = float(np.max(np.abs(grad)))
        if residual <= tol:
            break
        hess = (design.T * loss.d2(eta, a)) @ design / (2 * n)
        hess[np.diag_indices(p + 1)] += penalty_diag
        step = cho_solve(cho_factor(hess, lower=True), grad)

        f0 = objective(v)
        decrease = float(grad @ step)
        t = 1.0
        while True:
            candidate = v - t * step
            f_new = objective(candidate)
            if f_new <= f0 - 1e-4 * t * decrease or abs(f_new - f0) <= 1e-13 * max(1.0, abs(f0)):
                break
            t *= 0.5
            if t < 1e-12:
                raise ConvergenceError("Propensity line search stalled", residual, iteration)
        v = candidate
    else:
        raise ConvergenceError("Propensity Newton iterations exhausted", residual, max_iter)

    eta = design @ v
    logger.debug(f"Propensity M-fit ({loss.kind.value}): {iteration} Newton steps, kkt={residual:.2e}")
    return FitResult(
        intercept=float(v[0]),
        coef=v[1:].copy(),
        residual_score=loss.d1(eta, a),
        weights=np.ones(n),
        objective_value=objective(v),
        kkt_residual=residual,
        linear_predictor=eta,
        iterations=iteration,
        penalty_lambda=penalty.lam,
    )


def fit_propensity_moment(data: Dataset) -> tuple[np.ndarray, int]:
    """Moment estimate ``(1/n₁) Σ a_i x_i − (1/n) Σ x_i``.

    Raises:
        ValueError: If no unit is observed
    """
    n1 = data.n_observed
    if n1 == 0:
        raise ValueError("Moment method needs at least one observed unit")
    observed_mean = data.a @ data.X / n1
    return observed_mean - data.X.mean(axis=0), n1


def fit_ols(data: Dataset) -> FitResult:
    """Least squares with intercept on the observed units.

    Raises:
        SingularDesignError: If at most p units are observed or the design is rank deficient
    """
    n, p = data.n, data.p
    rows = np.flatnonzero(data.a)
    if rows.size <= p:
        raise SingularDesignError(f"OLS needs more than p={p} observed units, got {rows.size}")
    design = _with_intercept(data.X[rows])
    solution, _, rank, _ = lstsq(design, data.y[rows])
    if rank < p + 1:
        raise SingularDesignError(f"Observed design has rank {rank} < {p + 1}")

    eta = solution[0] + data.X @ solution[1:]
    score = data.a * (data.observed_outcomes - eta)
    kkt = float(np.max(np.abs(_with_intercept(data.X).T @ score))) / n
    return FitResult(
        intercept=float(solution[0]),
        coef=solution[1:],
        residual_score=score,
        weights=np.ones(n),
        objective_value=0.5 * float(score @ score) / n,
        kkt_residual=kkt,
        linear_predictor=eta,
    )


def fit_logistic_unpenalized(
    data: Dataset,
    link: Optional[LinkFunction] = None,
    max_iter: int = 200,
    tol: float = NEWTON_TOL,
    max_coef: float = 50.0,
) -> FitResult:
    """Bernoulli maximum likelihood for ``a`` given ``x`` by Fisher scoring.

    With ``link=None`` this is ordinary logistic regression; any other
    link gives the binomial GLM with that (known) link.

    Raises:
        SeparationError: If coefficients diverge (separable data)
        SingularDesignError: If the Fisher information is singular
        ConvergenceError: If ``max_iter`` iterations do not reach ``tol``
    """
    link = link or LinkFunction.pure_logistic()
    n = data.n
    a = data.a
    design = _with_intercept(data.X)
    eps = 1e-12

    def fitted(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pi, d1, _ = link.derivatives(design @ v)
        return np.clip(pi, eps, 1.0 - eps), d1

    def loglik(v: np.ndarray) -> float:
        pi, _ = fitted(v)
        return float(a @ np.log(pi) + (1.0 - a) @ np.log1p(-pi)) / n

    v = np.zeros(design.shape[1])
    mean_a = float(np.clip(a.mean(), link.lower + 1e-6, 1.0 - 1e-6))
    v[0] = link.inverse(mean_a)
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        pi, d1 = fitted(v)
        variance = pi * (1.0 - pi)
        score = design.T @ ((a - pi) * d1 / variance) / n
        residual = float(np.max(np.abs(score)))
        if residual <= tol:
            break
        info = (design.T * (d1**2 / variance)) @ design / n
        try:
            step = cho_solve(cho_factor(info, lower=True), score)
        except LinAlgError as e:
            raise SingularDesignError("Fisher information is singular") from e

        ll0 = loglik(v)
        t = 1.0
        while loglik(v + t * step) < ll0 - 1e-13 * max(1.0, abs(ll0)) and t > 1e-10:
            t *= 0.5
        v = v + t * step
        if np.max(np.abs(v)) > max_coef:
            raise SeparationError(
                f"Binary regression diverged (|coef| > {max_coef}); data look separable"
            )
    else:
        raise ConvergenceError("Binary MLE iterations exhausted", residual, max_iter)

    pi, _ = fitted(v)
    return FitResult(
        intercept=float(v[0]),
        coef=v[1:].copy(),
        residual_score=a - pi,
        weights=np.ones(n),
        objective_value=-loglik(v),
        kkt_residual=residual,
        linear_predictor=design @ v,
        iterations=iteration,
    )
