"""Propensity summary statistics and the shrinkage factor β̂.

All quantities live on the whitened scale (Σ = I). Gaussian expectations
use Gauss–Hermite quadrature from ``src.utils``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
from loguru import logger

from src.dof import DofAdjustments
from src.exceptions import ConvergenceError, DegenerateShrinkageError
from src.fits import FitResult, PropensityLoss
from src.model_gen import Dataset, LinkFunction
from src.utils import GH_NODES_1D, bivariate_gaussian_expectation, gauss_hermite

SHRINKAGE_FLOOR = 1e-8
SOLVER_TOL = 1e-10
SOLVER_MAX_ITER = 100


class ShrinkageMethod(str, Enum):
    MOMENT = "moment"
    M_ESTIMATION = "m-estimation"


@dataclass(frozen=True)
class SummaryStats:
    """Estimated summary parameters of the propensity model.

    Attributes:
        pi_hat: Observed fraction π̂
        gamma_mu_hat: Estimated ‖µ_x‖
        gamma_prop_star_hat: Estimated ‖µ_x,cfd − µ_x‖
        mu_prop_hat: Estimated mean of the propensity linear predictor
        gamma_prop_hat: Estimated standard deviation of the propensity linear predictor
        alpha1_hat: E[π']/E[π] at the estimates
        alpha2_hat: E[π'']/E[π] at the estimates
        sc_sigma_hat: Covariance spike prefactor
    """

    pi_hat: float
    gamma_mu_hat: float
    gamma_prop_star_hat: float
    mu_prop_hat: float
    gamma_prop_hat: float
    alpha1_hat: float
    alpha2_hat: float
    sc_sigma_hat: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class ShrinkageFactor:
    """Shrinkage factor of the debiased propensity estimate.

    Attributes:
        beta_hat: β̂
        method: Route that produced it
        degenerate: True when |β̂| is below the division floor
    """

    beta_hat: float
    method: ShrinkageMethod
    degenerate: bool = False


def _require_whitened(data: Dataset) -> None:
    if not data.is_whitened:
        raise ValueError("Summary statistics expect whitened data (Σ = I); call whiten() first")


def raw_moments(data: Dataset) -> tuple[float, float, float]:
    """Return ``(π̂, γ̂_µ, γ̂_prop*)``.

    ``γ̂_µ² = (‖µ̂_x‖² − p/n)₊`` and
    ``γ̂_prop*² = (‖µ̂_x,cfd − µ̂_x‖² − (p/n)(1 − π̂)/π̂)₊``.

    Raises:
        ValueError: If no unit is observed or the data are not whitened
    """
    _require_whitened(data)
    n, p = data.n, data.p
    n1 = data.n_observed
    if n1 == 0:
        raise ValueError("Summary statistics need at least one observed unit")
    pi_hat = n1 / n
    mean_x = data.X.mean(axis=0)
    mean_cfd = data.a @ data.X / n1
    ratio = p / n

    gamma_mu_sq = float(mean_x @ mean_x) - ratio
    shift = mean_cfd - mean_x
    gamma_star_sq = float(shift @ shift) - ratio * (1.0 - pi_hat) / pi_hat
    if gamma_star_sq <= 0:
        logger.debug("Propensity signal estimate clamped at zero")
    return pi_hat, float(np.sqrt(max(gamma_mu_sq, 0.0))), float(np.sqrt(max(gamma_star_sq, 0.0)))


def solve_offset_strength(
    pi_hat: float, gamma_prop_star_hat: float, link: LinkFunction
) -> tuple[float, float]:
    """Solve ``E[π(µ + γG)] = π̂`` and ``E[G π(µ + γG)] = π̂ γ̂_prop*`` for ``(µ, γ)``.

    The pair is the minimizer over ``v₁ ≥ 0`` of the strictly convex
    ``f(v₀, v₁) = E[F(v₀ + v₁G)] − π̂v₀ − π̂γ̂_prop* v₁`` with ``F' = π``;
    Newton's method with step-halving is run until the gradient norm is at
    most 1e-10.

    Raises:
        ValueError: If π̂ is outside the range of the link
        ConvergenceError: If Newton's method does not converge
    """
    if not link.lower < pi_hat < link.upper:
        raise ValueError(f"pi_hat={pi_hat} outside link range ({link.lower}, {link.upper})")
    mu0 = link.inverse(pi_hat)
    if gamma_prop_star_hat == 0.0:
        return mu0, 0.0

    rule = gauss_hermite(GH_NODES_1D)
    g, w = rule.nodes, rule.weights
    target = np.array([pi_hat, pi_hat * gamma_prop_star_hat])

    def objective(v: np.ndarray) -> float:
        return float(w @ link.antiderivative(v[0] + v[1] * g)) - float(target @ v)

    v = np.array([mu0, pi_hat * gamma_prop_star_hat / float(link.derivative(mu0))])
    norm = np.inf
    for iteration in range(1, SOLVER_MAX_ITER + 1):
        pi, d1, _ = link.derivatives(v[0] + v[1] * g)
        grad = np.array([w @ pi, w @ (g * pi)]) - target
        norm = float(np.linalg.norm(grad))
        if norm <= SOLVER_TOL:
            break
        m0, m1, m2 = w @ d1, w @ (g * d1), w @ (g * g * d1)
        step = np.linalg.solve(np.array([[m0, m1], [m1, m2]]), grad)

        t = 1.0
        if step[1] > v[1]:
            t = 0.5 * v[1] / step[1]
        f0 = objective(v)
        candidate = v - t * step
        while t > 1e-12:
            candidate = v - t * step
            f_new = objective(candidate)
            if f_new <= f0 - 1e-4 * t * float(grad @ step) or abs(f_new - f0) <= 1e-14 * max(1.0, abs(f0)):
                break
            t *= 0.5
        v = candidate
    else:
        raise ConvergenceError("Offset/strength Newton iterations exhausted", norm, SOLVER_MAX_ITER)

    logger.debug(f"Offset/strength solved in {iteration} steps: mu={v[0]:.6g}, gamma={v[1]:.6g}")
    return float(v[0]), float(v[1])


def alphas_and_spike(
    mu_prop_hat: float, gamma_prop_hat: float, link: LinkFunction
) -> tuple[float, float, float]:
    """Return ``(α̂₁, α̂₂, ŝc_Σ)`` at ``η ~ N(µ̂_prop, γ̂_prop²)``.

    ``ŝc_Σ = (α̂₂ − α̂₁²)/(1 + (α̂₂ − α̂₁²)γ̂_prop²)``.

    Raises:
        ValueError: If the implied conditional covariance is not positive definite
    """
    rule = gauss_hermite(GH_NODES_1D)
    pi, d1, d2 = link.derivatives(mu_prop_hat + gamma_prop_hat * rule.nodes)
    mean_pi = float(rule.weights @ pi)
    alpha1 = float(rule.weights @ d1) / mean_pi
    alpha2 = float(rule.weights @ d2) / mean_pi
    spike = alpha2 - alpha1**2
    denominator = 1.0 + spike * gamma_prop_hat**2
    if denominator <= 0:
        raise ValueError(f"Conditional covariance spike is not positive definite (1 + k·γ² = {denominator:.3e})")
    return alpha1, alpha2, spike / denominator


def compute_summary_stats(data: Dataset, link: LinkFunction) -> SummaryStats:
    """Chain raw_moments, solve_offset_strength and alphas_and_spike."""
    pi_hat, gamma_mu, gamma_star = raw_moments(data)
    mu_prop, gamma_prop = solve_offset_strength(pi_hat, gamma_star, link)
    alpha1, alpha2, sc_sigma = alphas_and_spike(mu_prop, gamma_prop, link)
    return SummaryStats(
        pi_hat=pi_hat,
        gamma_mu_hat=gamma_mu,
        gamma_prop_star_hat=gamma_star,
        mu_prop_hat=mu_prop,
        gamma_prop_hat=gamma_prop,
        alpha1_hat=alpha1,
        alpha2_hat=alpha2,
        sc_sigma_hat=sc_sigma,
    )


def shrinkage_moment(stats: SummaryStats) -> ShrinkageFactor:
    """Moment route: ``β̂ = α̂₁``."""
    degenerate = abs(stats.alpha1_hat) < SHRINKAGE_FLOOR
    if degenerate:
        logger.warning(f"Shrinkage factor {stats.alpha1_hat:.3e} below floor {SHRINKAGE_FLOOR:g}")
    return ShrinkageFactor(beta_hat=stats.alpha1_hat, method=ShrinkageMethod.MOMENT, degenerate=degenerate)


def leave_one_out_predictor(prop_fit: FitResult, dof: DofAdjustments) -> np.ndarray:
    """``η̂^loo = η̂ + ζ̂_prop^η·ℓ'(η̂; a)``."""
    return prop_fit.linear_predictor + dof.zeta_eta * prop_fit.residual_score


def shrinkage_integral(
    prop_fit: FitResult,
    dof: DofAdjustments,
    stats: SummaryStats,
    loss: PropensityLoss,
    link: LinkFunction,
    data: Dataset,
) -> float:
    """Evaluate ``E[π'(G_prop)(ℓ'(prox_{ζℓ(·;1)}(G^loo); 1) − ℓ'(prox_{ζℓ(·;0)}(G^loo); 0))]``.

    ``(G_prop, G^loo)`` is bivariate normal with mean ``(µ̂_prop, η̄^loo)``
    and covariance ``[[γ̂_prop², ŝ], [ŝ, ‖θ̂_prop‖²]]`` where
    ``ŝ = Σ(η̂_i^loo − η̄^loo)a_i/(nπ̂α̂₁)`` and ``ζ = ζ̂_prop^η``.

    Raises:
        DegenerateShrinkageError: If α̂₁ is below the division floor
        ValueError: If the covariance cannot be made positive definite
    """
    if abs(stats.alpha1_hat) < SHRINKAGE_FLOOR:
        raise DegenerateShrinkageError(f"alpha1_hat={stats.alpha1_hat:.3e} too close to zero")
    n = data.n
    eta_loo = leave_one_out_predictor(prop_fit, dof)
    eta_bar = float(eta_loo.mean())
    cross = float((eta_loo - eta_bar) @ data.a) / (n * stats.pi_hat * stats.alpha1_hat)
    cov = np.array(
        [[stats.gamma_prop_hat**2, cross], [cross, float(prop_fit.coef @ prop_fit.coef)]]
    )
    zeta = dof.zeta_eta

    def integrand(g_prop: np.ndarray, g_loo: np.ndarray) -> np.ndarray:
        gap = loss.d1(loss.prox(g_loo, zeta, 1.0), 1.0) - loss.d1(loss.prox(g_loo, zeta, 0.0), 0.0)
        return link.derivative(g_prop) * gap

    return bivariate_gaussian_expectation(integrand, np.array([stats.mu_prop_hat, eta_bar]), cov)


def shrinkage_mestimation(
    prop_fit: FitResult,
    dof: DofAdjustments,
    stats: SummaryStats,
    loss: PropensityLoss,
    link: LinkFunction,
    data: Dataset,
) -> ShrinkageFactor:
    """M-estimation route: ``β̂ = −shrinkage_integral/ζ̂_prop^θ``.

    This is the slope that the one-step estimate
    ``θ̂_prop − Xᵀℓ'(η̂; a)/(nζ̂_prop^θ)`` is centered at; for the
    shifted-square loss it reduces to ``E[π'(G_prop)]``.
    """
    beta = -shrinkage_integral(prop_fit, dof, stats, loss, link, data) / dof.zeta_theta
    degenerate = abs(beta) < SHRINKAGE_FLOOR
    if degenerate:
        logger.warning(f"Shrinkage factor {beta:.3e} below floor {SHRINKAGE_FLOOR:g}")
    return ShrinkageFactor(beta_hat=beta, method=ShrinkageMethod.M_ESTIMATION, degenerate=degenerate)
