"""One-replicate orchestration of the fits, adjustments and debiasing methods."""

from __future__ import annotations

from functools import cached_property
from typing import Optional

import numpy as np
from loguru import logger

from src.debias import (
    CfdMoments,
    DebiasMethod,
    DebiasReport,
    PropensityRoute,
    build_influence,
    compute_dbadj,
    conditional_moments,
    debias_empirical_sca,
    debias_naive,
    debias_oracle_ascw,
    debias_propensity,
    plug_in_report,
)
from src.dof import DofAdjustments, dof_for_outcome, dof_for_propensity
from src.fits import (
    FitResult,
    Penalty,
    PropensityLoss,
    dof_adjusted_ipw_weights,
    fit_outcome,
    fit_propensity_m,
    ipw_weights,
)
from src.model_gen import Dataset, LinkFunction, ModelSpec, WhiteningTransform, whiten
from src.summary_stats import (
    ShrinkageFactor,
    SummaryStats,
    compute_summary_stats,
    shrinkage_mestimation,
    shrinkage_moment,
)
from src.theory import BiasPrediction, WeightScheme, dof_ipw_bias_bound, population_summary, predict_bias

# Methods that read the true propensity or feature moments.
ORACLE_METHODS = frozenset(
    {
        DebiasMethod.RIDGE_IPW,
        DebiasMethod.NAIVE_IPW_WEIGHTED,
        DebiasMethod.NAIVE_DOF_IPW,
        DebiasMethod.ORACLE_ASCW,
    }
)

_SCHEMES = {
    DebiasMethod.RIDGE: WeightScheme.UNIT,
    DebiasMethod.NAIVE: WeightScheme.UNIT,
    DebiasMethod.ORACLE_ASCW: WeightScheme.UNIT,
    DebiasMethod.EMPIRICAL_SCA_MOMENT: WeightScheme.UNIT,
    DebiasMethod.EMPIRICAL_SCA_MEST: WeightScheme.UNIT,
    DebiasMethod.RIDGE_IPW: WeightScheme.IPW,
    DebiasMethod.NAIVE_IPW_WEIGHTED: WeightScheme.IPW,
    DebiasMethod.NAIVE_DOF_IPW: WeightScheme.DOF_ADJUSTED_IPW,
}


class EstimationPipeline:
    """Run the debiasing methods on one dataset.

    The data are whitened once; fits, DOF pairs, summary statistics and the
    debiased propensity are computed lazily and shared across methods.
    Reports come back in original coordinates.

    Attributes:
        data: Sample in original coordinates
        lam: Ridge parameter of the outcome fit
        link: Propensity link (known)
        spec: Generative model, required by the oracle and weighted methods
        route: Propensity route of the empirical SCA methods
        loss: Loss of the propensity M-estimate
        oracle_mean: Center naive debiasing at the model mean when ``spec`` is known
        omega: Offset of the degrees-of-freedom adjusted IPW weights
        prop_lam: Ridge parameter of the propensity M-estimate (defaults to ``lam``)

    Examples:
        >>> from src.model_gen import generate
        >>> spec = ModelSpec.unit_signal(50, sigma=0.2)
        >>> pipeline = EstimationPipeline(generate(spec, 40, seed=1), 1.0, spec.link, spec=spec)
        >>> report = pipeline.run(DebiasMethod.EMPIRICAL_SCA_MOMENT)
    """

    def __init__(
        self,
        data: Dataset,
        lam: float,
        link: LinkFunction,
        *,
        spec: Optional[ModelSpec] = None,
        route: PropensityRoute = PropensityRoute.MOMENT,
        loss: PropensityLoss = PropensityLoss(),
        oracle_mean: bool = True,
        omega: float = 0.05,
        prop_lam: Optional[float] = None,
    ) -> None:
        if lam <= 0:
            raise ValueError(f"Ridge parameter must be positive, got {lam}")
        self.data = data
        self.lam = lam
        self.link = link
        self.spec = spec
        self.route = PropensityRoute(route)
        self.loss = loss
        self.oracle_mean = oracle_mean
        self.omega = omega
        self.prop_lam = lam if prop_lam is None else prop_lam

    @cached_property
    def _whitened(self) -> tuple[Dataset, WhiteningTransform]:
        return whiten(self.data)

    @property
    def data_w(self) -> Dataset:
        return self._whitened[0]

    @property
    def transform(self) -> WhiteningTransform:
        return self._whitened[1]

    @cached_property
    def spec_w(self) -> ModelSpec:
        if self.spec is None:
            raise ValueError("This method needs the generative model (spec=None)")
        return self.spec.whitened()

    @cached_property
    def penalty(self) -> Penalty:
        return Penalty.ridge(self.lam)

    @cached_property
    def outcome_fit(self) -> FitResult:
        return fit_outcome(self.data_w, self.penalty)

    @cached_property
    def outcome_dof(self) -> DofAdjustments:
        return dof_for_outcome(self.outcome_fit, self.data_w, self.penalty)

    def _weighted(self, omega: float) -> tuple[FitResult, DofAdjustments]:
        spec_w = self.spec_w
        weight_fn = ipw_weights(self.link) if omega == 0.0 else dof_adjusted_ipw_weights(self.link, omega)
        fit = fit_outcome(
            self.data_w, self.penalty, weight_fn, (spec_w.theta_prop0, spec_w.theta_prop)
        )
        return fit, dof_for_outcome(fit, self.data_w, self.penalty)

    @cached_property
    def ipw_fit(self) -> tuple[FitResult, DofAdjustments]:
        """Outcome fit weighted by ``1/π`` at the true propensity."""
        return self._weighted(0.0)

    @cached_property
    def dof_ipw_fit(self) -> tuple[FitResult, DofAdjustments]:
        """Outcome fit weighted by ``1/(π − ω)`` at the true propensity."""
        return self._weighted(self.omega)

    @cached_property
    def summary(self) -> SummaryStats:
        return compute_summary_stats(self.data_w, self.link)

    @cached_property
    def population(self) -> SummaryStats:
        return population_summary(self.spec_w)

    @cached_property
    def propensity_fit(self) -> FitResult:
        return fit_propensity_m(self.data_w, Penalty.ridge(self.prop_lam), self.loss)

    @cached_property
    def propensity_dof(self) -> DofAdjustments:
        return dof_for_propensity(
            self.propensity_fit, self.data_w, Penalty.ridge(self.prop_lam), self.loss
        )

    def shrinkage(self, route: PropensityRoute) -> ShrinkageFactor:
        if route == PropensityRoute.MOMENT:
            return shrinkage_moment(self.summary)
        return shrinkage_mestimation(
            self.propensity_fit, self.propensity_dof, self.summary, self.loss, self.link, self.data_w
        )

    def theta_prop_de(self, route: PropensityRoute) -> np.ndarray:
        """Debiased propensity direction (whitened scale)."""
        if route == PropensityRoute.MOMENT:
            return debias_propensity(self.data_w, self.summary, self.shrinkage(route), route)
        return debias_propensity(
            self.data_w,
            self.summary,
            self.shrinkage(route),
            route,
            self.propensity_fit,
            self.propensity_dof,
        )

    @cached_property
    def cfd(self) -> CfdMoments:
        pop = self.population
        return conditional_moments(self.spec_w, (pop.alpha1_hat, pop.alpha2_hat))

    def fit_for(self, method: DebiasMethod) -> tuple[FitResult, DofAdjustments]:
        """Outcome fit and DOF pair a method is built on."""
        method = DebiasMethod(method)
        if method in (DebiasMethod.RIDGE_IPW, DebiasMethod.NAIVE_IPW_WEIGHTED):
            return self.ipw_fit
        if method == DebiasMethod.NAIVE_DOF_IPW:
            return self.dof_ipw_fit
        return self.outcome_fit, self.outcome_dof

    def _empirical(self, method: DebiasMethod, route: PropensityRoute) -> DebiasReport:
        fit, dof = self.outcome_fit, self.outcome_dof
        data_w = self.data_w
        beta = self.shrinkage(route)
        theta_prop_de = self.theta_prop_de(route)
        if route == PropensityRoute.MOMENT:
            influence = build_influence(fit, dof, data_w, self.summary, route)
        else:
            influence = build_influence(
                fit, dof, data_w, self.summary, route, self.propensity_fit, self.propensity_dof
            )
        adjustments = compute_dbadj(fit, data_w, dof, self.summary, theta_prop_de, influence, beta)
        return debias_empirical_sca(
            fit,
            data_w,
            dof,
            self.summary,
            adjustments,
            theta_prop_de,
            method=method,
            transform=self.transform,
        )

    def run(self, method: DebiasMethod | str) -> DebiasReport:
        """Compute one method's report.

        Raises:
            ValueError: If an oracle or weighted method is requested without a spec
            EstimationError: If a fit or adjustment fails
        """
        method = DebiasMethod(method)
        if method in ORACLE_METHODS and self.spec is None:
            raise ValueError(f"Method {method.value} needs the generative model")
        logger.debug(f"Running {method.value} (n={self.data.n}, p={self.data.p}, lambda={self.lam:g})")

        if method in (DebiasMethod.RIDGE, DebiasMethod.RIDGE_IPW):
            fit, _ = self.fit_for(method)
            return plug_in_report(fit, self.data_w, method, self.transform)
        if method in (DebiasMethod.NAIVE, DebiasMethod.NAIVE_IPW_WEIGHTED, DebiasMethod.NAIVE_DOF_IPW):
            fit, dof = self.fit_for(method)
            mu_x = self.spec_w.mu_x if self.oracle_mean and self.spec is not None else None
            return debias_naive(fit, self.data_w, dof, mu_x, method=method, transform=self.transform)
        if method == DebiasMethod.ORACLE_ASCW:
            return debias_oracle_ascw(
                self.outcome_fit, self.data_w, self.outcome_dof, self.cfd, transform=self.transform
            )
        if method == DebiasMethod.EMPIRICAL_SCA_MOMENT:
            return self._empirical(method, PropensityRoute.MOMENT)
        return self._empirical(method, PropensityRoute.M_EST)

    def run_default(self) -> DebiasReport:
        """Empirical SCA along the configured propensity route."""
        if self.route == PropensityRoute.MOMENT:
            return self.run(DebiasMethod.EMPIRICAL_SCA_MOMENT)
        return self.run(DebiasMethod.EMPIRICAL_SCA_MEST)

    def alignment(self, method: DebiasMethod | str = DebiasMethod.NAIVE) -> float:
        """``⟨θ_prop, θ_out − θ̂_out⟩_Σ`` for the fit underlying ``method``."""
        fit, _ = self.fit_for(DebiasMethod(method))
        spec_w = self.spec_w
        return float(spec_w.theta_prop @ (spec_w.theta_out - fit.coef))

    def prediction_error(self, report: DebiasReport) -> float:
        """``‖θ̂ − θ_out‖²_Σ`` of the coefficients in ``report``."""
        diff = self.transform.to_whitened_coef(report.theta_de) - self.spec_w.theta_out
        return float(diff @ diff)

    def predicted(self, method: DebiasMethod | str) -> Optional[BiasPrediction]:
        """Analytic bias factors for the debiased methods; None for plug-ins."""
        method = DebiasMethod(method)
        if method in (DebiasMethod.RIDGE, DebiasMethod.RIDGE_IPW):
            return None
        _, dof = self.fit_for(method)
        scheme = _SCHEMES[method]
        if method in (DebiasMethod.NAIVE, DebiasMethod.NAIVE_IPW_WEIGHTED, DebiasMethod.NAIVE_DOF_IPW):
            sc_mu, sc_sigma = 0.0, 0.0
        else:
            sc_mu, sc_sigma = self.population.alpha1_hat, self.population.sc_sigma_hat
        if scheme == WeightScheme.DOF_ADJUSTED_IPW:
            zeta = dof.rescaled(self.lam).zeta_eta
        else:
            zeta = dof.zeta_eta
        return predict_bias(self.spec_w, zeta, sc_mu, sc_sigma, scheme, self.omega, self.lam)

    def bias_proxy(self) -> float:
        """Degrees-of-freedom adjusted IPW bias proxy ``|ζ̂^η − ω|``."""
        _, dof = self.dof_ipw_fit
        return dof_ipw_bias_bound(self.spec_w, self.lam, self.omega, dof.rescaled(self.lam))
