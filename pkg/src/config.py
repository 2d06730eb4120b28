"""Configuration management with validation."""

from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd
import yaml
from loguru import logger
from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.model_gen import LinkFunction, LinkKind, ModelSpec

VALID_METHODS = [
    # debiased ridge family
    "ridge", "ridge-ipw", "naive", "naive-ipw-weighted", "naive-dof-ipw",
    "oracle-ascw", "empirical-sca-moment", "empirical-sca-mest",
    # classical baselines
    "g-1f", "g-2f", "aipw-1f", "aipw-2f", "aipw-3f", "ipw-1f", "ipw-2f", "ipw-3f",
]


class LinkConfig(BaseModel):
    """Propensity link settings.

    Attributes:
        kind: Link family (offset-logistic, pure-logistic, tabulated)
        floor: Lower bound c₀ of the offset-logistic link
        table: CSV with columns ``eta,pi`` for a tabulated link
    """

    kind: str = Field(
        default="offset-logistic",
        description="Link family"
    )
    floor: float = Field(
        default=0.1,
        ge=0.0,
        lt=1.0,
        description="Offset-logistic floor c0"
    )
    table: Optional[Path] = Field(
        default=None,
        description="Tabulated link CSV (columns eta, pi)"
    )

    @field_validator("kind")
    @classmethod
    def validate_kind(cls, v: str) -> str:
        """Validate link family.

        Raises:
            ValueError: If the family is not supported
        """
        valid_kinds = [kind.value for kind in LinkKind]
        if v not in valid_kinds:
            raise ValueError(
                f"Invalid link kind '{v}'. Choose from: {', '.join(valid_kinds)}"
            )
        return v

    @model_validator(mode="after")
    def check_table(self) -> "LinkConfig":
        if self.kind == LinkKind.TABULATED.value and self.table is None:
            raise ValueError("A tabulated link needs 'table' (CSV with columns eta, pi)")
        return self

    def build(self) -> LinkFunction:
        if self.kind == LinkKind.TABULATED.value:
            return LinkFunction.from_csv(self.table)
        if self.kind == LinkKind.PURE_LOGISTIC.value:
            return LinkFunction.pure_logistic()
        return LinkFunction.offset_logistic(self.floor)


class ModelSpecConfig(BaseModel):
    """Generative model settings.

    Vectors are given densely or by shorthand: ``"e1"`` for the first unit
    vector, ``"zero"`` for the zero vector. Dotted keys such as
    ``link.floor: 0.1`` are folded into the nested ``link`` section.

    Attributes:
        p: Dimension (None: derived from the experiment ratio)
        n: Sample size (None: taken from the experiment n_grid)
        theta_out0: Outcome intercept
        theta_out: Outcome coefficients or shorthand
        theta_prop0: Propensity intercept
        theta_prop: Propensity coefficients or shorthand
        mu_x: Feature mean or shorthand
        sigma: Outcome noise level
        sigma_matrix: "identity" or a CSV with the p×p covariance (no header)
        link: Propensity link
    """

    p: Optional[int] = Field(default=None, ge=1, description="Dimension")
    n: Optional[int] = Field(default=None, ge=1, description="Sample size")
    theta_out0: float = Field(default=0.0, description="Outcome intercept")
    theta_out: Union[str, list[float]] = Field(default="e1", description="Outcome coefficients")
    theta_prop0: float = Field(default=0.0, description="Propensity intercept")
    theta_prop: Union[str, list[float]] = Field(default="e1", description="Propensity coefficients")
    mu_x: Union[str, list[float]] = Field(default="zero", description="Feature mean")
    sigma: float = Field(default=1.0, ge=0.0, description="Outcome noise level")
    sigma_matrix: str = Field(default="identity", description="'identity' or covariance CSV")
    link: LinkConfig = Field(default_factory=LinkConfig, description="Propensity link")

    @model_validator(mode="before")
    @classmethod
    def fold_dotted_keys(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        folded: dict[str, Any] = {}
        for key, value in data.items():
            if "." in key:
                section, name = key.split(".", 1)
                folded[section] = {**(folded.get(section) or {}), name: value}
            elif isinstance(value, dict) and isinstance(folded.get(key), dict):
                folded[key] = {**value, **folded[key]}
            else:
                folded[key] = value
        return folded

    @field_validator("theta_out", "theta_prop", "mu_x")
    @classmethod
    def validate_vector(cls, v: Union[str, list[float]]) -> Union[str, list[float]]:
        if isinstance(v, str) and v not in ("e1", "zero"):
            raise ValueError(f"Invalid vector shorthand '{v}'. Choose from: e1, zero")
        return v

    @staticmethod
    def _vector(value: Union[str, list[float]], p: int, name: str) -> np.ndarray:
        if value == "zero":
            return np.zeros(p)
        if value == "e1":
            e1 = np.zeros(p)
            e1[0] = 1.0
            return e1
        vector = np.asarray(value, dtype=float)
        if vector.shape != (p,):
            raise ValueError(f"{name} has length {vector.size}, expected p={p}")
        return vector

    def build(self, p: Optional[int] = None) -> ModelSpec:
        """Materialize the spec at dimension ``p`` (defaults to the configured p).

        Raises:
            ValueError: If no dimension is known or a vector has the wrong length
        """
        p = p or self.p
        if p is None:
            raise ValueError("Model dimension p is not set")
        if self.sigma_matrix == "identity":
            sigma_matrix = np.eye(p)
        else:
            sigma_matrix = pd.read_csv(self.sigma_matrix, header=None).to_numpy(dtype=float)
        return ModelSpec(
            theta_out0=self.theta_out0,
            theta_out=self._vector(self.theta_out, p, "theta_out"),
            theta_prop0=self.theta_prop0,
            theta_prop=self._vector(self.theta_prop, p, "theta_prop"),
            mu_x=self._vector(self.mu_x, p, "mu_x"),
            sigma_matrix=sigma_matrix,
            sigma=self.sigma,
            link=self.link.build(),
        )


class ExperimentConfig(BaseModel):
    """Monte Carlo experiment settings.

    Attributes:
        name: Experiment id written into every CSV row
        preset: Preset the settings came from, if any
        model: Generative model
        n_grid: Sample sizes
        ratio: p/n; p = round(ratio·n) at each grid point
        lam_grid: Ridge parameters
        replicates: Replicates per grid point
        methods: Estimators to evaluate
        seed: 64-bit experiment seed
        misspecify_outcome: Add the quadratic term to the outcome
        baseline_outcome: Outcome fitter of the classical baselines (ols, ridge)
        baseline_ridge_lam: λ of the ridge baseline fitter
        baseline_link: Link of the logistic baseline (model, pure-logistic)
        route: Propensity route of the empirical SCA default (moment, m-est)
        loss: Propensity M-estimation loss (shifted-square, logistic)
        prop_lam: Ridge parameter of the propensity fit (None: same as outcome)
        omega: Offset of the degrees-of-freedom adjusted IPW weights
        masking_audit: Re-run every replicate with unobserved outcomes scrambled
        oracle_mean: Center naive debiasing at the model feature mean
        max_failure_rate: Failed-row fraction above which the run aborts
    """

    name: str = Field(default="custom", description="Experiment id")
    preset: Optional[str] = Field(default=None, description="Source preset")
    model: ModelSpecConfig = Field(default_factory=ModelSpecConfig, description="Generative model")
    n_grid: list[int] = Field(default_factory=lambda: [1000], description="Sample sizes")
    ratio: float = Field(default=1.25, gt=0.0, description="p/n")
    lam_grid: list[float] = Field(default_factory=lambda: [1.0], description="Ridge parameters")
    replicates: int = Field(default=200, ge=0, description="Replicates per grid point")
    methods: list[str] = Field(
        default_factory=lambda: ["ridge", "naive", "naive-ipw-weighted", "oracle-ascw", "empirical-sca-moment"],
        description="Estimators"
    )
    seed: int = Field(default=20240607, ge=0, lt=2**64, description="Experiment seed")
    misspecify_outcome: bool = Field(default=False, description="Quadratic outcome override")
    baseline_outcome: str = Field(default="ols", description="Baseline outcome fitter")
    baseline_ridge_lam: float = Field(default=1.0, gt=0.0, description="Baseline ridge lambda")
    baseline_link: str = Field(default="model", description="Baseline propensity link")
    route: str = Field(default="moment", description="Propensity route")
    loss: str = Field(default="shifted-square", description="Propensity loss")
    prop_lam: Optional[float] = Field(default=None, gt=0.0, description="Propensity ridge lambda")
    omega: float = Field(default=0.05, gt=0.0, lt=1.0, description="DOF-IPW offset")
    masking_audit: bool = Field(default=False, description="Masking audit")
    oracle_mean: bool = Field(default=True, description="Oracle feature mean for naive debiasing")
    max_failure_rate: float = Field(default=0.2, ge=0.0, le=1.0, description="Abort threshold")

    @field_validator("methods")
    @classmethod
    def validate_methods(cls, v: list[str]) -> list[str]:
        unknown = [m for m in v if m not in VALID_METHODS]
        if unknown:
            raise ValueError(
                f"Invalid method(s) {', '.join(unknown)}. Choose from: {', '.join(VALID_METHODS)}"
            )
        return v

    @field_validator("n_grid")
    @classmethod
    def validate_n_grid(cls, v: list[int]) -> list[int]:
        if not v or min(v) < 1:
            raise ValueError("n_grid must be a non-empty list of positive sample sizes")
        return v

    @field_validator("lam_grid")
    @classmethod
    def validate_lam_grid(cls, v: list[float]) -> list[float]:
        if not v or min(v) <= 0:
            raise ValueError("lam_grid must be a non-empty list of positive ridge parameters")
        return v

    @field_validator("baseline_outcome")
    @classmethod
    def validate_baseline_outcome(cls, v: str) -> str:
        if v not in ("ols", "ridge"):
            raise ValueError(f"Invalid baseline outcome fitter '{v}'. Choose from: ols, ridge")
        return v

    @field_validator("baseline_link")
    @classmethod
    def validate_baseline_link(cls, v: str) -> str:
        if v not in ("model", "pure-logistic"):
            raise ValueError(f"Invalid baseline link '{v}'. Choose from: model, pure-logistic")
        return v

    @field_validator("route")
    @classmethod
    def validate_route(cls, v: str) -> str:
        if v not in ("moment", "m-est"):
            raise ValueError(f"Invalid propensity route '{v}'. Choose from: moment, m-est")
        return v

    @field_validator("loss")
    @classmethod
    def validate_loss(cls, v: str) -> str:
        if v not in ("shifted-square", "logistic"):
            raise ValueError(f"Invalid propensity loss '{v}'. Choose from: shifted-square, logistic")
        return v

    @model_validator(mode="after")
    def apply_model_sizes(self) -> "ExperimentConfig":
        # model.n stands in for a one-point grid unless n_grid is given
        if self.model.n is not None and "n_grid" not in self.model_fields_set:
            self.n_grid = [self.model.n]
        return self

    def dimension(self, n: int) -> int:
        """``p = round(ratio·n)``, at least 1; a fixed ``model.p`` wins."""
        if self.model.p is not None:
            return self.model.p
        return max(1, int(round(self.ratio * n)))


class AppConfig(BaseSettings):
    """Main configuration model.

    Attributes:
        output_folder: Directory for CSV tables
        logs_folder: Directory for log files
        workers: Worker processes for the replicate pool
        verbose: Enable verbose logging
        full_scale: Use the full replicate counts of the presets
        experiment: Experiment overriding the preset defaults
    """

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="MARDEBIAS_",
        case_sensitive=False
    )

    output_folder: Path = Field(
        default=Path("output"),
        description="Output folder for CSV tables"
    )
    logs_folder: Path = Field(
        default=Path("logs"),
        description="Logs folder"
    )
    workers: int = Field(
        default=1,
        ge=1,
        le=64,
        description="Worker processes"
    )
    verbose: bool = Field(
        default=False,
        description="Enable verbose logging"
    )
    full_scale: bool = Field(
        default=False,
        description="Full replicate counts"
    )
    experiment: Optional[ExperimentConfig] = Field(
        default=None,
        description="Experiment settings"
    )

    def ensure_directories(self) -> None:
        """Create output and logs directories if they don't exist."""
        self.output_folder.mkdir(parents=True, exist_ok=True)
        self.logs_folder.mkdir(parents=True, exist_ok=True)


def load_config(config_path: str | Path = "config.yaml") -> AppConfig:
    """Load and validate configuration from YAML file.

    Args:
        config_path: Path to the YAML configuration file

    Returns:
        Validated AppConfig object

    Raises:
        ValueError: If the file has invalid YAML syntax
        pydantic.ValidationError: If config values are invalid

    Examples:
        >>> config = load_config("config.yaml")
        >>> config.experiment.model.link.floor
        0.1
    """
    config_file = Path(config_path)

    if not config_file.exists():
        logger.warning(f"Config file '{config_path}' not found. Using default configuration.")
        return AppConfig()

    try:
        with open(config_file, "r", encoding="utf-8") as f:
            config_data = yaml.safe_load(f)

        if config_data is None:
            config_data = {}

        return AppConfig(**config_data)

    except yaml.YAMLError as e:
        raise ValueError(f"Invalid YAML in config file: {e}") from e


def save_config(config: AppConfig, config_path: str | Path = "config.yaml") -> None:
    """Save configuration to YAML file.

    Examples:
        >>> config = AppConfig(workers=4)
        >>> save_config(config, "config.yaml")
    """
    config_dict = config.model_dump(mode="json", exclude_none=True)

    with open(Path(config_path), "w", encoding="utf-8") as f:
        yaml.dump(config_dict, f, default_flow_style=False, sort_keys=False, indent=2)
