"""Shared fixtures."""

import numpy as np
import pytest

from src.model_gen import LinkFunction, ModelSpec, generate


@pytest.fixture
def link() -> LinkFunction:
    return LinkFunction.offset_logistic(0.1)


@pytest.fixture
def unit_spec() -> ModelSpec:
    """Unit-signal model in the consistency regime (p small)."""
    return ModelSpec.unit_signal(20, sigma=0.5)


@pytest.fixture
def wide_spec() -> ModelSpec:
    """Unit-signal model with p > n, as in the debiasing comparison."""
    return ModelSpec.unit_signal(250, sigma=0.2)


@pytest.fixture
def wide_data(wide_spec):
    return generate(wide_spec, 200, seed=11)


@pytest.fixture
def correlated_spec() -> ModelSpec:
    """Model with an AR(1) feature covariance and nonzero mean."""
    p = 30
    idx = np.arange(p)
    sigma_matrix = 0.5 ** np.abs(idx[:, None] - idx[None, :])
    rng = np.random.default_rng(0)
    theta_out = rng.standard_normal(p) / np.sqrt(p)
    theta_prop = rng.standard_normal(p) / np.sqrt(p)
    return ModelSpec(
        theta_out0=0.3,
        theta_out=theta_out,
        theta_prop0=0.2,
        theta_prop=theta_prop,
        mu_x=0.1 * np.ones(p),
        sigma_matrix=sigma_matrix,
        sigma=0.5,
        link=LinkFunction.offset_logistic(0.1),
    )
