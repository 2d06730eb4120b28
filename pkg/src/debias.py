"""Debiasing constructions for the G-computation estimate of µ_out.

Every function here works on whitened data (Σ = I). Reports map the
coefficients back to original coordinates through the stored
``WhiteningTransform``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.stats import norm

from src.dof import DofAdjustments
from src.exceptions import DegenerateShrinkageError, EstimationError, VarianceEstimateError
from src.fits import FitResult, fit_propensity_moment
from src.model_gen import Dataset, ModelSpec, WhiteningTransform
from src.summary_stats import SHRINKAGE_FLOOR, ShrinkageFactor, SummaryStats
from src.utils import is_identity

ZETA_FLOOR = 1e-10
Z_975 = float(norm.ppf(0.975))


class DebiasMethod(str, Enum):
    """Estimators of µ_out built on the ridge outcome fit."""

    RIDGE = "ridge"
    RIDGE_IPW = "ridge-ipw"
    NAIVE = "naive"
    NAIVE_IPW_WEIGHTED = "naive-ipw-weighted"
    NAIVE_DOF_IPW = "naive-dof-ipw"
    ORACLE_ASCW = "oracle-ascw"
    EMPIRICAL_SCA_MOMENT = "empirical-sca-moment"
    EMPIRICAL_SCA_MEST = "empirical-sca-mest"


class PropensityRoute(str, Enum):
    MOMENT = "moment"
    M_EST = "m-est"


@dataclass(frozen=True)
class InfluenceVectors:
    """Per-unit empirical influence vectors.

    Attributes:
        i_out: ``a⊙(y − η̂_out)/ζ̂_out^θ``, zero wherever ``a = 0``
        i_circ: ``a/π̂ − 1`` (moment) or ``−ℓ'(η̂_prop; a)/ζ̂_prop^θ`` (M-estimation)
        i_x_cfd: ``a/π̂``
    """

    i_out: np.ndarray
    i_circ: np.ndarray
    i_x_cfd: np.ndarray


@dataclass(frozen=True)
class DebiasAdjustments:
    """Plug-in adjustments and influence-function (co)variances."""

    dbadj01: float
    dbadj02: float
    dbadj1: float
    s_out: float
    s_outcirc: float
    s_circ: float
    s_xcirc: float
    beta_hat: float


@dataclass(frozen=True)
class CfdMoments:
    """Mean, covariance and precision of x given a = 1.

    Attributes:
        mean: µ_x,cfd
        cov: Σ_cfd
        cov_inv: Σ_cfd⁻¹
        sc_sigma: Sherman–Morrison prefactor
    """

    mean: np.ndarray
    cov: np.ndarray
    cov_inv: np.ndarray
    sc_sigma: float


@dataclass
class DebiasReport:
    """Debiased estimate and its uncertainty.

    Attributes:
        method: Construction used
        theta0_de: Debiased intercept
        theta_de: Debiased coefficients in original coordinates
        mu_out_de: ``theta0_de + ⟨mean_x, theta_de⟩``
        tau_hat: Estimated noise level of the coefficients (NaN when not defined)
        standard_errors: Per-coordinate standard errors ``τ̂·sqrt((Σ⁻¹)_jj)/√n``
        mean_x: Sample feature mean in original coordinates
        adjustments: Plug-in adjustments for the SCA methods
    """

    method: DebiasMethod
    theta0_de: float
    theta_de: np.ndarray
    mu_out_de: float
    tau_hat: float
    standard_errors: np.ndarray
    mean_x: np.ndarray
    adjustments: Optional[DebiasAdjustments] = None

    def z_scores(self, theta_true: np.ndarray) -> np.ndarray:
        return (self.theta_de - theta_true) / self.standard_errors


@dataclass(frozen=True)
class CoverageSummary:
    """Empirical CDF of coordinate z-scores and two-sided 95% coverage."""

    t_grid: np.ndarray
    cdf: np.ndarray
    coverage95: float


def _require_whitened(data: Dataset) -> None:
    if not data.is_whitened:
        raise ValueError("Debiasing expects whitened data (Σ = I); call whiten() first")


def _require_zeta(dof: DofAdjustments) -> None:
    if dof.zeta_theta <= ZETA_FLOOR:
        raise EstimationError(f"zeta_theta={dof.zeta_theta:.3e} too small to debias")


def _require_beta(beta: float) -> None:
    if abs(beta) < SHRINKAGE_FLOOR:
        raise DegenerateShrinkageError(f"beta_hat={beta:.3e} below floor {SHRINKAGE_FLOOR:g}")


def score_correction(fit: FitResult, data: Dataset, dof: DofAdjustments) -> np.ndarray:
    """``Xᵀ(a⊙w⊙(y − η̂))/(nζ̂_out^θ)``, the one-step coefficient correction."""
    return data.X.T @ fit.residual_score / (data.n * dof.zeta_theta)


def _report(
    method: DebiasMethod,
    theta0: float,
    theta_w: np.ndarray,
    tau: float,
    data: Dataset,
    transform: Optional[WhiteningTransform],
    adjustments: Optional[DebiasAdjustments] = None,
) -> DebiasReport:
    mean_w = data.X.mean(axis=0)
    if transform is None or transform.identity:
        theta, mean_x, precision = theta_w, mean_w, np.ones(data.p)
    else:
        theta = transform.to_original_coef(theta_w)
        mean_x = transform.to_original_point(mean_w)
        precision = transform.precision_diag
    return DebiasReport(
        method=method,
        theta0_de=float(theta0),
        theta_de=theta,
        mu_out_de=float(theta0 + mean_w @ theta_w),
        tau_hat=float(tau),
        standard_errors=tau * np.sqrt(precision / data.n),
        mean_x=mean_x,
        adjustments=adjustments,
    )


def plug_in_report(
    fit: FitResult,
    data: Dataset,
    method: DebiasMethod = DebiasMethod.RIDGE,
    transform: Optional[WhiteningTransform] = None,
) -> DebiasReport:
    """Report for the undebiased G-computation ``θ̂₀ + ⟨µ̂_x, θ̂⟩``."""
    return _report(method, fit.intercept, fit.coef, float("nan"), data, transform)


def debias_naive(
    fit: FitResult,
    data: Dataset,
    dof: DofAdjustments,
    mu_x: Optional[np.ndarray] = None,
    *,
    method: DebiasMethod = DebiasMethod.NAIVE,
    transform: Optional[WhiteningTransform] = None,
) -> DebiasReport:
    """One-step debiasing that ignores the missingness mechanism.

    ``bias₀ = ⟨m, g⟩`` and ``bias = −g`` with ``g = Xᵀ(a⊙w⊙r)/(nζ̂_out^θ)``;
    ``m`` is the model feature mean when given (whitened scale) and the sample
    mean otherwise.

    Raises:
        EstimationError: If ζ̂_out^θ is not positive
    """
    _require_whitened(data)
    _require_zeta(dof)
    correction = score_correction(fit, data, dof)
    center = data.X.mean(axis=0) if mu_x is None else mu_x
    theta0 = fit.intercept - float(center @ correction)
    tau = float(np.sqrt(fit.residual_score @ fit.residual_score / data.n)) / dof.zeta_theta
    return _report(method, theta0, fit.coef + correction, tau, data, transform)


def conditional_moments(spec: ModelSpec, theory_alphas: tuple[float, float]) -> CfdMoments:
    """Moments of x given a = 1 under the model.

    ``µ_cfd = µ_x + α₁Σθ_prop``, ``Σ_cfd = Σ + (α₂ − α₁²)Σθθᵀ Σ`` and, by
    Sherman–Morrison, ``Σ_cfd⁻¹ = Σ⁻¹ − sc_Σ θθᵀ`` with
    ``sc_Σ = (α₂ − α₁²)/(1 + (α₂ − α₁²)‖θ_prop‖²_Σ)``. For whitened specs
    ``Σθ = Σ^{1/2}θ = θ``.

    Raises:
        ValueError: If Σ_cfd is not positive definite
    """
    alpha1, alpha2 = theory_alphas
    spike = alpha2 - alpha1**2
    sigma = spec.sigma_matrix
    theta = spec.theta_prop
    direction = theta if is_identity(sigma) else sigma @ theta
    denominator = 1.0 + spike * float(theta @ direction)
    if denominator <= 0:
        raise ValueError(f"Conditional covariance is not positive definite (1 + k·γ² = {denominator:.3e})")
    sc_sigma = spike / denominator
    precision = np.eye(spec.p) if is_identity(sigma) else np.linalg.inv(sigma)
    return CfdMoments(
        mean=spec.mu_x + alpha1 * direction,
        cov=sigma + spike * np.outer(direction, direction),
        cov_inv=precision - sc_sigma * np.outer(theta, theta),
        sc_sigma=sc_sigma,
    )


def debias_oracle_ascw(
    fit: FitResult,
    data: Dataset,
    dof: DofAdjustments,
    cfd: CfdMoments,
    *,
    transform: Optional[WhiteningTransform] = None,
) -> DebiasReport:
    """Oracle shifted-confounder debiasing (matrix form).

    ``bias₀ = ⟨µ_cfd, Σ_cfd⁻¹g⟩``, ``bias = −Σ_cfd⁻¹g`` and ``τ̂ = ŝ_out``.

    Raises:
        ValueError: If the fit is weighted
    """
    _require_whitened(data)
    _require_zeta(dof)
    if not np.all(fit.weights == 1.0):
        raise ValueError("Oracle ASCW debiasing expects an unweighted outcome fit")
    shifted = cfd.cov_inv @ score_correction(fit, data, dof)
    theta0 = fit.intercept - float(cfd.mean @ shifted)
    tau = float(np.sqrt(fit.residual_score @ fit.residual_score / data.n)) / dof.zeta_theta
    return _report(DebiasMethod.ORACLE_ASCW, theta0, fit.coef + shifted, tau, data, transform)


def oracle_adjustments(
    fit: FitResult,
    data: Dataset,
    dof: DofAdjustments,
    cfd: CfdMoments,
    theta_prop: np.ndarray,
) -> tuple[float, float, float]:
    """Population ``(dbAdj01, dbAdj02, dbAdj1)`` of the expanded oracle form."""
    correction = score_correction(fit, data, dof)
    along = float(theta_prop @ correction)
    dbadj01 = float(cfd.mean @ correction)
    dbadj02 = -cfd.sc_sigma * float(cfd.mean @ theta_prop) * along
    return dbadj01, dbadj02, cfd.sc_sigma * along


def debias_oracle_expanded(
    fit: FitResult,
    data: Dataset,
    dof: DofAdjustments,
    cfd: CfdMoments,
    theta_prop: np.ndarray,
    *,
    transform: Optional[WhiteningTransform] = None,
) -> DebiasReport:
    """Oracle ASCW through the scalar adjustments; equals the matrix form."""
    _require_whitened(data)
    _require_zeta(dof)
    dbadj01, dbadj02, dbadj1 = oracle_adjustments(fit, data, dof, cfd, theta_prop)
    theta = fit.coef + score_correction(fit, data, dof) - dbadj1 * theta_prop
    tau = float(np.sqrt(fit.residual_score @ fit.residual_score / data.n)) / dof.zeta_theta
    return _report(
        DebiasMethod.ORACLE_ASCW, fit.intercept - dbadj01 - dbadj02, theta, tau, data, transform
    )


def debias_propensity(
    data: Dataset,
    stats: SummaryStats,
    beta: ShrinkageFactor,
    route: PropensityRoute,
    prop_fit: Optional[FitResult] = None,
    prop_dof: Optional[DofAdjustments] = None,
) -> np.ndarray:
    """Debiased propensity direction on the whitened scale.

    moment: ``(µ̂_x,cfd − µ̂_x)/β̂``.
    m-est: ``(θ̂_prop − Xᵀℓ'(η̂_prop; a)/(nζ̂_prop^θ))/β̂``.

    Raises:
        DegenerateShrinkageError: If |β̂| is below the floor
        ValueError: If the M-estimation route lacks its fit or DOF pair
    """
    _require_whitened(data)
    _require_beta(beta.beta_hat)
    if PropensityRoute(route) == PropensityRoute.MOMENT:
        coef, _ = fit_propensity_moment(data)
        return coef / beta.beta_hat
    if prop_fit is None or prop_dof is None:
        raise ValueError("M-estimation route needs the propensity fit and its DOF pair")
    one_step = prop_fit.coef - data.X.T @ prop_fit.residual_score / (data.n * prop_dof.zeta_theta)
    return one_step / beta.beta_hat


def build_influence(
    fit: FitResult,
    dof: DofAdjustments,
    data: Dataset,
    stats: SummaryStats,
    route: PropensityRoute,
    prop_fit: Optional[FitResult] = None,
    prop_dof: Optional[DofAdjustments] = None,
) -> InfluenceVectors:
    """Assemble the influence vectors for one replicate."""
    observed = data.a / stats.pi_hat
    if PropensityRoute(route) == PropensityRoute.MOMENT:
        i_circ = observed - 1.0
    else:
        if prop_fit is None or prop_dof is None:
            raise ValueError("M-estimation route needs the propensity fit and its DOF pair")
        i_circ = -prop_fit.residual_score / prop_dof.zeta_theta
    return InfluenceVectors(
        i_out=fit.residual_score / dof.zeta_theta,
        i_circ=i_circ,
        i_x_cfd=observed,
    )


def compute_dbadj(
    fit: FitResult,
    data: Dataset,
    dof: DofAdjustments,
    stats: SummaryStats,
    theta_prop_de: np.ndarray,
    influence: InfluenceVectors,
    beta: ShrinkageFactor,
) -> DebiasAdjustments:
    """Empirical dbAdj plug-ins with correlation corrections.

    With ``g = Xᵀ(a⊙r)/(nζ̂_out^θ)`` and
    ``c = ⟨θ̂_prop^de, g⟩ − ŝ_outcirc(p − nζ̂_out^ηζ̂_out^θ)/n``:
    ``dbAdj01 = ⟨µ̂_x,cfd, g⟩``,
    ``dbAdj02 = −ŝc_Σ(⟨µ̂_x,cfd, θ̂_prop^de⟩ − ŝ_xcirc·p/n)·c``,
    ``dbAdj1 = ŝc_Σ·c``. dbAdj01 has no correlation correction: the intercept
    score makes ``⟨î_x,cfd, î_out⟩`` vanish.

    Raises:
        DegenerateShrinkageError: If |β̂| is below the floor
    """
    _require_whitened(data)
    _require_zeta(dof)
    beta_hat = beta.beta_hat
    _require_beta(beta_hat)
    n, p = data.n, data.p
    i_out, i_circ, i_x = influence.i_out, influence.i_circ, influence.i_x_cfd

    s_out = float(np.sqrt(i_out @ i_out / n))
    s_outcirc = float(i_out @ i_circ) / (n * beta_hat)
    s_circ = float(np.sqrt(i_circ @ i_circ / n)) / abs(beta_hat)
    s_xcirc = float(i_x @ i_circ) / (n * beta_hat)

    correction = score_correction(fit, data, dof)
    mean_cfd = data.X.T @ i_x / n
    corrected = float(theta_prop_de @ correction) - s_outcirc * (p - n * dof.zeta_eta * dof.zeta_theta) / n
    shift = float(mean_cfd @ theta_prop_de) - s_xcirc * p / n
    sc = stats.sc_sigma_hat
    return DebiasAdjustments(
        dbadj01=float(mean_cfd @ correction),
        dbadj02=-sc * shift * corrected,
        dbadj1=sc * corrected,
        s_out=s_out,
        s_outcirc=s_outcirc,
        s_circ=s_circ,
        s_xcirc=s_xcirc,
        beta_hat=beta_hat,
    )


def debias_empirical_sca(
    fit: FitResult,
    data: Dataset,
    dof: DofAdjustments,
    stats: SummaryStats,
    adjustments: DebiasAdjustments,
    theta_prop_de: np.ndarray,
    *,
    method: DebiasMethod = DebiasMethod.EMPIRICAL_SCA_MOMENT,
    transform: Optional[WhiteningTransform] = None,
) -> DebiasReport:
    """Empirical shifted-confounder augmentation.

    ``bias₀ = dbAdj01 + dbAdj02``, ``bias = −g + dbAdj1·θ̂_prop^de`` and
    ``τ̂² = ŝ_out² − 2·dbAdj1·ŝ_outcirc + dbAdj1²·ŝ_circ²``.

    Raises:
        VarianceEstimateError: If τ̂² is negative
    """
    _require_whitened(data)
    _require_zeta(dof)
    adj = adjustments
    theta = fit.coef + score_correction(fit, data, dof) - adj.dbadj1 * theta_prop_de
    theta0 = fit.intercept - adj.dbadj01 - adj.dbadj02
    tau_sq = adj.s_out**2 - 2.0 * adj.dbadj1 * adj.s_outcirc + adj.dbadj1**2 * adj.s_circ**2
    if tau_sq < 0:
        raise VarianceEstimateError(f"Negative variance estimate tau^2={tau_sq:.3e}")
    return _report(method, theta0, theta, float(np.sqrt(tau_sq)), data, transform, adjustments=adj)


def coverage_stats(
    report: DebiasReport,
    spec: ModelSpec,
    t_grid: Optional[np.ndarray] = None,
) -> CoverageSummary:
    """Empirical CDF of ``z_j = (θ̂_j^de − θ_out,j)/SE_j`` and 95% coverage."""
    t_grid = np.linspace(-3.0, 3.0, 13) if t_grid is None else np.asarray(t_grid, dtype=float)
    if not np.isfinite(report.tau_hat):
        return CoverageSummary(t_grid=t_grid, cdf=np.full(t_grid.shape, np.nan), coverage95=float("nan"))
    z = report.z_scores(spec.theta_out)
    cdf = (z[:, None] <= t_grid[None, :]).mean(axis=0)
    return CoverageSummary(t_grid=t_grid, cdf=cdf, coverage95=float(np.mean(np.abs(z) <= Z_975)))
