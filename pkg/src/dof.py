"""Degrees-of-freedom adjustment factors.

The pair ``(ζθ, ζη)`` is the unique positive solution of

    ζθ = (1/n) Σ_i ℓ̈_i / (ζη ℓ̈_i + 1),
    ζη = (1/n) Σ_j 1 / (ζθ + e_j),

where ``ℓ̈_i`` are the loss curvatures at the fit and ``e_j`` the
eigenvalues of the penalty Hessian on the whitened scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from loguru import logger
from scipy.optimize import brentq

from src.exceptions import ConvergenceError
from src.fits import FitResult, Penalty, PropensityLoss
from src.model_gen import Dataset

BRACKET_XTOL = 1e-14
MAX_ITER = 200
RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class DofAdjustments:
    """Solution of the degrees-of-freedom equations.

    Attributes:
        zeta_theta: ζθ > 0
        zeta_eta: ζη > 0
        iterations: Root-finder iterations
        residual: Residual of the second equation at the solution
    """

    zeta_theta: float
    zeta_eta: float
    iterations: int
    residual: float

    def rescaled(self, lam: float) -> DofAdjustments:
        """Express the pair for the same fit with weights divided by λ and a unit penalty.

        Dividing all curvatures and eigenvalues by λ maps
        ``(ζθ, ζη) ↦ (ζθ/λ, λζη)``.
        """
        return DofAdjustments(
            zeta_theta=self.zeta_theta / lam,
            zeta_eta=self.zeta_eta * lam,
            iterations=self.iterations,
            residual=self.residual,
        )


def _zeta_theta(zeta_eta: float, curvatures: np.ndarray, n: int) -> float:
    return float(np.sum(curvatures / (zeta_eta * curvatures + 1.0))) / n


def solve_dof(curvatures: np.ndarray, hessian_eigs: np.ndarray, n: int) -> DofAdjustments:
    """Solve the degrees-of-freedom fixed point.

    ``ζθ`` is a strictly decreasing closed-form function of ``ζη``; the
    remaining scalar equation is solved by bracketed root finding over
    ``[0, (1/n) Σ_j 1/e_j]``, where the residual changes sign.

    Args:
        curvatures: Per-unit loss curvatures (non-negative, not all zero)
        hessian_eigs: Penalty Hessian eigenvalues (positive)
        n: Sample size normalizing both sums

    Returns:
        DofAdjustments: The unique positive solution

    Raises:
        ValueError: If the inputs violate the preconditions
        ConvergenceError: If the root finder fails or the residual check fails

    Examples:
        >>> dof = solve_dof(np.ones(1000), np.full(70, 1e-12), 1000)
        >>> round(dof.zeta_theta, 6)
        0.93
    """
    curvatures = np.asarray(curvatures, dtype=float)
    eigs = np.asarray(hessian_eigs, dtype=float)
    if not (np.all(np.isfinite(curvatures)) and np.all(np.isfinite(eigs))):
        raise ValueError("Degrees-of-freedom inputs contain non-finite values")
    if np.any(curvatures < 0) or not np.any(curvatures > 0):
        raise ValueError("Curvatures must be non-negative and not all zero")
    if eigs.size == 0 or np.any(eigs <= 0):
        raise ValueError("Penalty Hessian eigenvalues must be positive")

    def residual(zeta_eta: float) -> float:
        zeta_theta = _zeta_theta(zeta_eta, curvatures, n)
        return zeta_eta - float(np.sum(1.0 / (zeta_theta + eigs))) / n

    upper = float(np.sum(1.0 / eigs)) / n
    try:
        zeta_eta, info = brentq(
            residual, 0.0, upper, xtol=BRACKET_XTOL, maxiter=MAX_ITER, full_output=True
        )
    except (ValueError, RuntimeError) as e:
        raise ConvergenceError(f"Degrees-of-freedom root finding failed: {e}", float("nan")) from e

    zeta_theta = _zeta_theta(zeta_eta, curvatures, n)
    gap = abs(residual(zeta_eta))
    if not info.converged or gap > RESIDUAL_TOL * max(1.0, zeta_eta):
        raise ConvergenceError("Degrees-of-freedom residual above tolerance", gap, info.iterations)
    logger.debug(f"DOF solved: zeta_theta={zeta_theta:.6g}, zeta_eta={zeta_eta:.6g}, {info.iterations} iterations")
    return DofAdjustments(
        zeta_theta=zeta_theta,
        zeta_eta=float(zeta_eta),
        iterations=int(info.iterations),
        residual=gap,
    )


def dof_for_outcome(fit: FitResult, data: Dataset, penalty: Penalty) -> DofAdjustments:
    """DOF pair of an outcome fit; curvatures are ``a_i·w_i``."""
    return solve_dof(data.a * fit.weights, penalty.hessian_eigenvalues(data.p), data.n)


def dof_for_propensity(
    fit: FitResult, data: Dataset, penalty: Penalty, loss: PropensityLoss
) -> DofAdjustments:
    """DOF pair of a propensity M-estimate.

    The propensity objective carries ``1/(2n)`` on the loss sum, which is the
    ``1/n`` convention with penalty ``2λ``; the eigenvalues passed on are
    therefore ``2λ``.
    """
    curvatures = loss.d2(fit.linear_predictor, data.a)
    return solve_dof(curvatures, 2.0 * penalty.hessian_eigenvalues(data.p), data.n)
