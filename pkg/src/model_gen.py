"""Generative model, link functions, synthetic data and whitening.

The observation model is

    x ~ N(µ_x, Σ),   y = θ_out0 + ⟨x, θ_out⟩ + ε,   a | x ~ Bernoulli(π(θ_prop0 + ⟨x, θ_prop⟩)),

with ``y`` observed only when ``a = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.special import expit, logit

from src.utils import is_identity, make_rng, symmetric_sqrt


class LinkKind(str, Enum):
    """Supported propensity link families."""

    OFFSET_LOGISTIC = "offset-logistic"
    PURE_LOGISTIC = "pure-logistic"
    TABULATED = "tabulated"


class OutcomeForm(str, Enum):
    """Outcome regression used when generating ``y``."""

    LINEAR = "linear"
    QUADRATIC = "quadratic"


@dataclass(frozen=True, eq=False)
class LinkFunction:
    """Strictly increasing link ``π: ℝ → (0, 1)``.

    Offset-logistic links are ``π(η) = c₀ + (1 − c₀)·logistic(η)``, so
    ``inf π = c₀`` and ``sup π = 1``. Tabulated links interpolate
    ``logit π`` at the knots with a natural cubic spline and continue it
    linearly outside, which keeps ``π`` twice differentiable.

    Attributes:
        kind: Link family
        floor: Lower bound ``c₀`` for the offset-logistic family
        knots: Increasing η grid (tabulated only)
        values: π at the knots (tabulated only)
    """

    kind: LinkKind = LinkKind.OFFSET_LOGISTIC
    floor: float = 0.0
    knots: np.ndarray | None = None
    values: np.ndarray | None = None
    _spline: CubicSpline | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", LinkKind(self.kind))
        if not 0.0 <= self.floor < 1.0:
            raise ValueError(f"Link floor must lie in [0, 1), got {self.floor}")
        if self.kind == LinkKind.PURE_LOGISTIC and self.floor != 0.0:
            raise ValueError("pure-logistic link has no floor; use offset-logistic")
        if self.kind == LinkKind.TABULATED:
            self._build_spline()

    def _build_spline(self) -> None:
        if self.knots is None or self.values is None:
            raise ValueError("Tabulated link needs knots and values")
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 4:
            raise ValueError("Tabulated link needs at least 4 matching knots and values")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("Tabulated link knots must be strictly increasing")
        if np.any(values <= 0) or np.any(values >= 1) or np.any(np.diff(values) <= 0):
            raise ValueError("Tabulated link values must be strictly increasing inside (0, 1)")

        spline = CubicSpline(knots, logit(values), bc_type="natural")
        grid = np.linspace(knots[0], knots[-1], 50 * knots.size)
        if np.any(spline(grid, 1) <= 0):
            raise ValueError("Interpolated tabulated link is not strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_spline", spline)

    @classmethod
    def offset_logistic(cls, floor: float = 0.1) -> LinkFunction:
        return cls(kind=LinkKind.OFFSET_LOGISTIC, floor=floor)

    @classmethod
    def pure_logistic(cls) -> LinkFunction:
        return cls(kind=LinkKind.PURE_LOGISTIC)

    @classmethod
    def tabulated(cls, knots: np.ndarray, values: np.ndarray) -> LinkFunction:
        return cls(kind=LinkKind.TABULATED, knots=np.asarray(knots), values=np.asarray(values))

    @classmethod
    def from_csv(cls, path: str | Path) -> LinkFunction:
        """Load a tabulated link from a CSV with columns ``eta`` and ``pi``."""
        table = pd.read_csv(path)
        missing = {"eta", "pi"} - set(table.columns)
        if missing:
            raise ValueError(f"Link table {path} is missing columns: {', '.join(sorted(missing))}")
        table = table.sort_values("eta")
        return cls.tabulated(table["eta"].to_numpy(), table["pi"].to_numpy())

    @property
    def lower(self) -> float:
        """Infimum of π."""
        return self.floor if self.kind != LinkKind.TABULATED else 0.0

    @property
    def upper(self) -> float:
        """Supremum of π."""
        return 1.0

    def _logit_path(self, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # spline value and derivatives, continued linearly past the end knots
        spline = self._spline
        lo, hi = self.knots[0], self.knots[-1]
        inside = np.clip(eta, lo, hi)
        g = spline(inside)
        g1 = spline(inside, 1)
        g2 = np.where((eta < lo) | (eta > hi), 0.0, spline(inside, 2))
        g = g + g1 * (eta - inside)
        return g, g1, g2

    def derivatives(self, eta: np.ndarray | float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Evaluate ``(π, π', π'')`` elementwise."""
        eta = np.asarray(eta, dtype=float)
        if self.kind == LinkKind.TABULATED:
            g, g1, g2 = self._logit_path(eta)
            s = expit(g)
            ds = s * (1.0 - s)
            return s, ds * g1, ds * (1.0 - 2.0 * s) * g1**2 + ds * g2
        s = expit(eta)
        scale = 1.0 - self.floor
        ds = s * (1.0 - s)
        return self.floor + scale * s, scale * ds, scale * ds * (1.0 - 2.0 * s)

    def __call__(self, eta: np.ndarray | float) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        if self.kind == LinkKind.TABULATED:
            return expit(self._logit_path(eta)[0])
        return self.floor + (1.0 - self.floor) * expit(eta)

    def derivative(self, eta: np.ndarray | float) -> np.ndarray:
        return self.derivatives(eta)[1]

    def second_derivative(self, eta: np.ndarray | float) -> np.ndarray:
        return self.derivatives(eta)[2]

    def antiderivative(self, t: np.ndarray | float) -> np.ndarray:
        """``F(t) = ∫₀ᵗ π(s) ds``, closed form for the logistic families."""
        t = np.asarray(t, dtype=float)
        if self.kind == LinkKind.TABULATED:
            flat = [quad(lambda s: float(self(s)), 0.0, float(ti), limit=200)[0] for ti in t.ravel()]
            return np.asarray(flat).reshape(t.shape)
        c0 = self.floor
        return c0 * t + (1.0 - c0) * (np.logaddexp(0.0, t) - np.log(2.0))

    def inverse(self, prob: float) -> float:
        """Solve ``π(η) = prob``.

        Raises:
            ValueError: If prob lies outside the open range of π
        """
        if not self.lower < prob < self.upper:
            raise ValueError(
                f"Probability {prob} outside link range ({self.lower}, {self.upper})"
            )
        if self.kind != LinkKind.TABULATED:
            return float(logit((prob - self.floor) / (1.0 - self.floor)))
        target = float(logit(prob))
        lo, hi = float(self.knots[0]), float(self.knots[-1])
        g_lo, g_hi = self._logit_path(np.array([lo, hi]))[0]
        if target <= g_lo:
            return lo + (target - g_lo) / float(self._spline(lo, 1))
        if target >= g_hi:
            return hi + (target - g_hi) / float(self._spline(hi, 1))
        return float(brentq(lambda e: float(self._spline(e)) - target, lo, hi, xtol=1e-14))


def link_eval(link: LinkFunction, eta: float) -> tuple[float, float, float]:
    """Return ``(π(η), π'(η), π''(η))`` as floats."""
    pi, d1, d2 = link.derivatives(eta)
    return float(pi), float(d1), float(d2)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Full generative model.

    Attributes:
        theta_out0: Outcome intercept
        theta_out: Outcome coefficients (length p)
        theta_prop0: Propensity intercept
        theta_prop: Propensity coefficients (length p)
        mu_x: Feature mean (length p)
        sigma_matrix: Feature covariance (p×p, SPD)
        sigma: Outcome noise standard deviation
        link: Propensity link
    """

    theta_out0: float
    theta_out: np.ndarray
    theta_prop0: float
    theta_prop: np.ndarray
    mu_x: np.ndarray
    sigma_matrix: np.ndarray
    sigma: float
    link: LinkFunction

    def __post_init__(self) -> None:
        for name in ("theta_out", "theta_prop", "mu_x", "sigma_matrix"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        p = self.theta_out.shape[0]
        if self.theta_out.shape != (p,) or self.theta_prop.shape != (p,) or self.mu_x.shape != (p,):
            raise ValueError("theta_out, theta_prop and mu_x must be vectors of the same length")
        if self.sigma_matrix.shape != (p, p):
            raise ValueError(f"Covariance must be {p}x{p}, got {self.sigma_matrix.shape}")
        if self.sigma < 0:
            raise ValueError(f"Noise level must be non-negative, got {self.sigma}")
        if not is_identity(self.sigma_matrix):
            if not np.allclose(self.sigma_matrix, self.sigma_matrix.T):
                raise ValueError("Covariance must be symmetric")
            smallest = np.linalg.eigvalsh(self.sigma_matrix)[0]
            if smallest <= 0:
                raise ValueError(f"Covariance is not positive definite (smallest eigenvalue {smallest:.3e})")

    @classmethod
    def unit_signal(
        cls,
        p: int,
        *,
        theta_out0: float = 0.0,
        theta_prop0: float = 0.0,
        sigma: float = 1.0,
        link: LinkFunction | None = None,
        outcome_sign: float = 1.0,
    ) -> ModelSpec:
        """Spec with ``θ_out = outcome_sign·e₁``, ``θ_prop = e₁``, ``µ_x = 0``, ``Σ = I``."""
        e1 = np.zeros(p)
        e1[0] = 1.0
        return cls(
            theta_out0=theta_out0,
            theta_out=outcome_sign * e1,
            theta_prop0=theta_prop0,
            theta_prop=e1.copy(),
            mu_x=np.zeros(p),
            sigma_matrix=np.eye(p),
            sigma=sigma,
            link=link or LinkFunction.offset_logistic(0.1),
        )

    @property
    def p(self) -> int:
        return int(self.theta_out.shape[0])

    @property
    def mu_out(self) -> float:
        """Population mean outcome ``θ_out0 + ⟨µ_x, θ_out⟩``."""
        return float(self.theta_out0 + self.mu_x @ self.theta_out)

    @property
    def mu_prop(self) -> float:
        """Mean of the propensity linear predictor."""
        return float(self.theta_prop0 + self.mu_x @ self.theta_prop)

    @property
    def gamma_prop(self) -> float:
        """Standard deviation ``‖θ_prop‖_Σ`` of the propensity linear predictor."""
        return float(np.sqrt(self.theta_prop @ self.sigma_matrix @ self.theta_prop))

    @cached_property
    def _roots(self) -> tuple[np.ndarray, np.ndarray]:
        if is_identity(self.sigma_matrix):
            eye = np.eye(self.p)
            return eye, eye
        return symmetric_sqrt(self.sigma_matrix)

    @cached_property
    def cholesky(self) -> np.ndarray | None:
        """Lower Cholesky factor of Σ, or None when Σ = I."""
        if is_identity(self.sigma_matrix):
            return None
        return np.linalg.cholesky(self.sigma_matrix)

    def whitened(self) -> ModelSpec:
        """Equivalent spec for whitened features ``x' = Σ^{-1/2}x``."""
        if is_identity(self.sigma_matrix):
            return self
        root, inv_root = self._roots
        return replace(
            self,
            theta_out=root @ self.theta_out,
            theta_prop=root @ self.theta_prop,
            mu_x=inv_root @ self.mu_x,
            sigma_matrix=np.eye(self.p),
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Realized sample ``(X, y, a)`` and the known feature covariance.

    ``y`` is defined for every unit; downstream code only reads ``a⊙y``.

    Attributes:
        X: n×p design
        y: Outcomes (length n)
        a: Observation indicators in {0, 1}
        sigma_matrix: Known covariance of the rows of X
    """

    X: np.ndarray
    y: np.ndarray
    a: np.ndarray
    sigma_matrix: np.ndarray | None = None

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError(f"Design must be a non-empty 2-d array, got shape {X.shape}")
        n, p = X.shape
        y = np.asarray(self.y, dtype=float).reshape(-1)
        a = np.asarray(self.a, dtype=float).reshape(-1)
        if y.shape != (n,) or a.shape != (n,):
            raise ValueError(f"y and a must have length {n}")
        if not np.all((a == 0.0) | (a == 1.0)):
            raise ValueError("Missingness indicators must be 0 or 1")
        sigma_matrix = np.eye(p) if self.sigma_matrix is None else np.asarray(self.sigma_matrix, dtype=float)
        if sigma_matrix.shape != (p, p):
            raise ValueError(f"Covariance must be {p}x{p}, got {sigma_matrix.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "sigma_matrix", sigma_matrix)

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    @property
    def n_observed(self) -> int:
        return int(self.a.sum())

    @property
    def observed_outcomes(self) -> np.ndarray:
        """``a⊙y`` with unobserved entries exactly zero."""
        return np.where(self.a == 1.0, self.y, 0.0)

    @property
    def is_whitened(self) -> bool:
        return is_identity(self.sigma_matrix)

    def masked(self) -> Dataset:
        """Copy with every unobserved outcome zeroed."""
        return replace(self, y=self.observed_outcomes)

    def subset(self, index: np.ndarray) -> Dataset:
        return Dataset(self.X[index], self.y[index], self.a[index], self.sigma_matrix)


def generate(
    spec: ModelSpec,
    n: int,
    seed: int,
    *,
    outcome: OutcomeForm = OutcomeForm.LINEAR,
    spawn_key: tuple[int, ...] = (),
) -> Dataset:
    """Draw ``n`` iid units from the model.

    Args:
        spec: Generative model
        n: Sample size (>= 1)
        seed: 64-bit seed; identical seeds give identical datasets
        outcome: Linear model, or the quadratic override
            ``θ_out0 + ⟨x, θ_out⟩ + ⟨x − µ_x, θ_out⟩² − ‖θ_out‖²_Σ`` which keeps ``E[y] = µ_out``
        spawn_key: Substream path below the seed (grid point, replicate)

    Returns:
        Dataset: Sample carrying ``spec.sigma_matrix``

    Raises:
        ValueError: If n < 1

    Examples:
        >>> spec = ModelSpec.unit_signal(10, sigma=0.2)
        >>> data = generate(spec, 100, seed=7)
        >>> data.X.shape
        (100, 10)
    """
    if n < 1:
        raise ValueError(f"Sample size must be >= 1, got {n}")
    rng = make_rng(seed, *spawn_key)
    z = rng.standard_normal((n, spec.p))
    noise = rng.standard_normal(n)
    uniforms = rng.random(n)

    chol = spec.cholesky
    X = spec.mu_x + (z if chol is None else z @ chol.T)
    signal = X @ spec.theta_out
    y = spec.theta_out0 + signal + spec.sigma * noise
    if OutcomeForm(outcome) == OutcomeForm.QUADRATIC:
        centered = signal - spec.mu_x @ spec.theta_out
        y = y + centered**2 - spec.theta_out @ spec.sigma_matrix @ spec.theta_out

    eta_prop = spec.theta_prop0 + X @ spec.theta_prop
    a = (uniforms < spec.link(eta_prop)).astype(float)
    return Dataset(X=X, y=y, a=a, sigma_matrix=spec.sigma_matrix)


@dataclass(frozen=True, eq=False)
class WhiteningTransform:
    """Record of the map ``x ↦ Σ^{-1/2}x``.

    Attributes:
        root: Σ^{1/2}
        inv_root: Σ^{-1/2}
        identity: Whether Σ = I (all maps are no-ops)
    """

    root: np.ndarray
    inv_root: np.ndarray
    identity: bool = False

    def to_whitened_coef(self, theta: np.ndarray) -> np.ndarray:
        return theta if self.identity else self.root @ theta

    def to_original_coef(self, theta_w: np.ndarray) -> np.ndarray:
        return theta_w if self.identity else self.inv_root @ theta_w

    def to_whitened_point(self, x: np.ndarray) -> np.ndarray:
        return x if self.identity else self.inv_root @ x

    def to_original_point(self, x_w: np.ndarray) -> np.ndarray:
        return x_w if self.identity else self.root @ x_w

    def unwhiten(self, data: Dataset) -> Dataset:
        if self.identity:
            return data
        sigma_matrix = self.root @ self.root
        return Dataset(data.X @ self.root, data.y, data.a, 0.5 * (sigma_matrix + sigma_matrix.T))

    @cached_property
    def precision_diag(self) -> np.ndarray:
        """Diagonal of Σ⁻¹, the inverse conditional variances ``Σ_{j|-j}⁻¹``."""
        if self.identity:
            return np.ones(self.root.shape[0])
        return np.einsum("ij,ij->j", self.inv_root, self.inv_root)


def whiten(data: Dataset) -> tuple[Dataset, WhiteningTransform]:
    """Reduce a dataset to identity covariance.

    Linear predictors are preserved: ``X'θ' = Xθ`` with ``θ' = Σ^{1/2}θ``.

    Raises:
        ValueError: If Σ is not symmetric positive definite
    """
    if data.is_whitened:
        eye = data.sigma_matrix
        return data, WhiteningTransform(root=eye, inv_root=eye, identity=True)
    root, inv_root = symmetric_sqrt(data.sigma_matrix)
    whitened = Dataset(data.X @ inv_root, data.y, data.a, np.eye(data.p))
    return whitened, WhiteningTransform(root=root, inv_root=inv_root)
