"""Named experiment presets.

All presets share the unit-signal model: ``θ_out = θ_prop = e₁``, zero
intercepts, ``µ_x = 0``, ``Σ = I`` and the offset-logistic link with floor
0.1.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from src.config import ExperimentConfig, LinkConfig, ModelSpecConfig

DESK_REPLICATES = 200
FULL_REPLICATES = 1000

BASELINE_METHODS = ["g-1f", "g-2f", "aipw-1f", "aipw-2f", "aipw-3f", "ipw-1f", "ipw-2f", "ipw-3f"]
DEBIAS_METHODS = [
    "ridge",
    "naive",
    "naive-ipw-weighted",
    "oracle-ascw",
    "empirical-sca-moment",
    "empirical-sca-mest",
]
SWEEP_METHODS = [
    "ridge",
    "ridge-ipw",
    "naive",
    "naive-ipw-weighted",
    "naive-dof-ipw",
    "oracle-ascw",
    "empirical-sca-moment",
]


class Preset(str, Enum):
    FIG1 = "fig1"
    FIG2 = "fig2"
    FIG3 = "fig3"
    FIG_DEBIAS = "fig-debias"
    LAMBDA_SWEEP = "lambda-sweep"


def log_grid(lo: int = 100, hi: int = 1000, count: int = 10) -> list[int]:
    """``count`` sample sizes equidistant on a log scale, rounded."""
    return [int(n) for n in np.round(np.logspace(np.log10(lo), np.log10(hi), count))]


def _model(sigma: float) -> ModelSpecConfig:
    return ModelSpecConfig(sigma=sigma, link=LinkConfig(kind="offset-logistic", floor=0.1))


def build_preset(name: Preset | str, full_scale: bool = False) -> ExperimentConfig:
    """Experiment settings for a named preset.

    Args:
        name: Preset name
        full_scale: 1000 replicates instead of the desk-scale 200

    Returns:
        ExperimentConfig: Settings ready for the runner

    Raises:
        ValueError: If the preset is unknown
    """
    preset = Preset(name)
    replicates = FULL_REPLICATES if full_scale else DESK_REPLICATES

    if preset in (Preset.FIG1, Preset.FIG2, Preset.FIG3):
        return ExperimentConfig(
            name=preset.value,
            preset=preset.value,
            model=_model(sigma=1.0),
            n_grid=log_grid(),
            ratio=0.07,
            lam_grid=[1.0],
            replicates=replicates,
            methods=list(BASELINE_METHODS),
            misspecify_outcome=preset == Preset.FIG3,
            baseline_outcome="ridge" if preset == Preset.FIG2 else "ols",
        )
    if preset == Preset.FIG_DEBIAS:
        return ExperimentConfig(
            name=preset.value,
            preset=preset.value,
            model=_model(sigma=0.2),
            n_grid=log_grid(),
            ratio=1.25,
            lam_grid=[1.0],
            replicates=replicates,
            methods=list(DEBIAS_METHODS),
            route="moment",
        )
    return ExperimentConfig(
        name=preset.value,
        preset=preset.value,
        model=_model(sigma=0.2),
        n_grid=[1000],
        ratio=1.25,
        lam_grid=[float(lam) for lam in np.logspace(-1.0, 1.0, 8)],
        replicates=replicates,
        methods=list(SWEEP_METHODS),
        omega=0.05,
    )
