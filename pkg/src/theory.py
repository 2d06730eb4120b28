"""Analytic bias predictions for debiased G-computation.

An outcome fit with weights ``w(η_prop)`` behaves as if observations were
drawn with the modified propensity

    π_ζ(η) = ζw(η)/(1 + ζw(η)) · π(η),

and the debiased estimate of µ_out is off by approximately
``⟨θ_prop, θ_out − θ̂_out⟩·(bias₁ − sc_µ·bias₂·‖θ_prop‖²)`` where
``bias₁ = α₁(ζ) − sc_µ`` and ``bias₂ = (α₂(ζ) − α₁(ζ)²)(1 − sc_Σ‖θ_prop‖²) − sc_Σ``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from loguru import logger

from src.dof import DofAdjustments, solve_dof
from src.model_gen import LinkFunction, ModelSpec
from src.summary_stats import SummaryStats, alphas_and_spike
from src.utils import GH_NODES_1D, gauss_hermite


class WeightScheme(str, Enum):
    UNIT = "unit"
    IPW = "ipw"
    DOF_ADJUSTED_IPW = "dof-adjusted-ipw"


class FailureSign(str, Enum):
    BIASED_POSITIVE = "biased-positive"
    BIASED_NEGATIVE = "biased-negative"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class BiasPrediction:
    """Predicted bias factors for one weighting scheme.

    Attributes:
        alpha1_zeta: E[π_ζ']/E[π_ζ]
        alpha2_zeta: E[π_ζ'']/E[π_ζ]
        bias1: α₁(ζ) − sc_µ
        bias2: (α₂(ζ) − α₁(ζ)²)(1 − sc_Σ‖θ_prop‖²) − sc_Σ
        weight_scheme: Outcome weights the prediction refers to
        sc_mu: Mean-shift coefficient used by the debiasing
        sc_sigma: Covariance-spike coefficient used by the debiasing
        gamma_prop_sq: ‖θ_prop‖²_Σ
    """

    alpha1_zeta: float
    alpha2_zeta: float
    bias1: float
    bias2: float
    weight_scheme: WeightScheme
    sc_mu: float
    sc_sigma: float
    gamma_prop_sq: float

    def mean_bias(self, alignment: float) -> float:
        """Predicted ``µ̂^de − µ_out`` given ``⟨θ_prop, θ_out − θ̂_out⟩``."""
        return alignment * (self.bias1 - self.sc_mu * self.bias2 * self.gamma_prop_sq)


def modified_propensity(
    eta: np.ndarray,
    link: LinkFunction,
    zeta: float,
    scheme: WeightScheme = WeightScheme.UNIT,
    omega: float = 0.0,
    lam: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(π_ζ, π_ζ', π_ζ'')`` elementwise.

    For the IPW-type schemes ``π_ζ = sπ/(π + κ)`` with
    ``(s, κ) = (ζ, ζ)`` for ``w = 1/π`` and ``(ζ/λ, ζ/λ − ω)`` for
    ``w = λ⁻¹/(π − ω)``. In the latter case ``zeta`` is expressed for the
    unit-penalty problem (see ``DofAdjustments.rescaled``).
    """
    pi, d1, d2 = link.derivatives(eta)
    scheme = WeightScheme(scheme)
    if scheme == WeightScheme.UNIT:
        factor = zeta / (1.0 + zeta)
        return factor * pi, factor * d1, factor * d2
    if scheme == WeightScheme.IPW:
        scale, kappa = zeta, zeta
    else:
        scale, kappa = zeta / lam, zeta / lam - omega
    denom = pi + kappa
    q1 = scale * kappa / denom**2
    q2 = -2.0 * scale * kappa / denom**3
    return scale * pi / denom, q1 * d1, q2 * d1**2 + q1 * d2


def alphas_zeta(
    spec: ModelSpec,
    zeta: float,
    scheme: WeightScheme = WeightScheme.UNIT,
    omega: float = 0.0,
    lam: float = 1.0,
) -> tuple[float, float]:
    """``(α₁(ζ), α₂(ζ))`` with ``η_prop ~ N(µ_prop, ‖θ_prop‖²_Σ)``."""
    rule = gauss_hermite(GH_NODES_1D)
    eta = spec.mu_prop + spec.gamma_prop * rule.nodes
    pz, dz1, dz2 = modified_propensity(eta, spec.link, zeta, scheme, omega, lam)
    mean = float(rule.weights @ pz)
    return float(rule.weights @ dz1) / mean, float(rule.weights @ dz2) / mean


def population_summary(spec: ModelSpec) -> SummaryStats:
    """Population counterparts of the summary statistics, by quadrature."""
    rule = gauss_hermite(GH_NODES_1D)
    pi_bar = float(rule.weights @ spec.link(spec.mu_prop + spec.gamma_prop * rule.nodes))
    alpha1, alpha2, sc_sigma = alphas_and_spike(spec.mu_prop, spec.gamma_prop, spec.link)
    precision_mean = np.linalg.solve(spec.sigma_matrix, spec.mu_x)
    return SummaryStats(
        pi_hat=pi_bar,
        gamma_mu_hat=float(np.sqrt(max(float(spec.mu_x @ precision_mean), 0.0))),
        gamma_prop_star_hat=alpha1 * spec.gamma_prop,
        mu_prop_hat=spec.mu_prop,
        gamma_prop_hat=spec.gamma_prop,
        alpha1_hat=alpha1,
        alpha2_hat=alpha2,
        sc_sigma_hat=sc_sigma,
    )


def predict_bias(
    spec: ModelSpec,
    zeta_eta: float,
    sc_mu: float,
    sc_sigma: float,
    weight_scheme: WeightScheme = WeightScheme.UNIT,
    omega: float = 0.0,
    lam: float = 1.0,
) -> BiasPrediction:
    """Bias factors of a debiased estimate built from a weighted outcome fit.

    Examples:
        >>> spec = ModelSpec.unit_signal(10)
        >>> pop = population_summary(spec)
        >>> pred = predict_bias(spec, 0.3, pop.alpha1_hat, pop.sc_sigma_hat)
        >>> abs(pred.bias1) < 1e-12
        True
    """
    alpha1, alpha2 = alphas_zeta(spec, zeta_eta, weight_scheme, omega, lam)
    gamma_sq = spec.gamma_prop**2
    return BiasPrediction(
        alpha1_zeta=alpha1,
        alpha2_zeta=alpha2,
        bias1=alpha1 - sc_mu,
        bias2=(alpha2 - alpha1**2) * (1.0 - sc_sigma * gamma_sq) - sc_sigma,
        weight_scheme=WeightScheme(weight_scheme),
        sc_mu=sc_mu,
        sc_sigma=sc_sigma,
        gamma_prop_sq=gamma_sq,
    )


def failure_score(spec: ModelSpec, lam: float, zeta_theta: float) -> float:
    """``ζθ/(λ + ζθ)·‖θ_prop‖²_Σ + ⟨θ_prop, θ_out⟩_Σ``; its sign predicts the naive bias."""
    shrink = zeta_theta / (lam + zeta_theta)
    sigma_prop = spec.sigma_matrix @ spec.theta_prop
    return shrink * float(spec.theta_prop @ sigma_prop) + float(spec.theta_out @ sigma_prop)


def predict_failure_region(
    spec: ModelSpec,
    lam: float,
    n: int,
    zeta_theta: float | None = None,
    tol: float = 0.05,
) -> FailureSign:
    """Predict the sign of the naive (or IPW-weighted) debiased-ridge bias.

    Without a fitted ``zeta_theta`` the population surrogate is used: the
    DOF pair for curvatures equal to the mean propensity and Hessian
    eigenvalues λ.

    Args:
        spec: Model (ridge fit on Σ-whitened features assumed)
        lam: Ridge parameter
        n: Sample size of the fit
        zeta_theta: Fitted ζ̂_out^θ, if available
        tol: Half-width of the indeterminate band around zero

    Returns:
        FailureSign: Predicted sign, or indeterminate near zero
    """
    if zeta_theta is None:
        pi_bar = population_summary(spec).pi_hat
        zeta_theta = solve_dof(np.full(n, pi_bar), np.full(spec.p, lam), n).zeta_theta
    score = failure_score(spec, lam, zeta_theta)
    logger.debug(f"Failure score {score:.4g} (lambda={lam:g}, zeta_theta={zeta_theta:.4g})")
    if abs(score) < tol:
        return FailureSign.INDETERMINATE
    return FailureSign.BIASED_POSITIVE if score > 0 else FailureSign.BIASED_NEGATIVE


def dof_ipw_bias_bound(
    spec: ModelSpec, lam: float, omega: float, fitted_dof: DofAdjustments
) -> float:
    """Proxy ``|ζ̂^η/λ − ω|`` for the bias of degrees-of-freedom adjusted IPW.

    ``fitted_dof`` is the DOF pair of the fit with weights ``1/(π − ω)``
    and ridge parameter λ, expressed for the unit-penalty problem
    (``DofAdjustments.rescaled(lam)``).

    Raises:
        ValueError: If ω is not strictly between 0 and the link floor
    """
    floor = spec.link.lower
    if not 0.0 < omega < floor:
        raise ValueError(f"omega={omega} must lie strictly between 0 and the link floor c0={floor}")
    return abs(fitted_dof.zeta_eta / lam - omega)
