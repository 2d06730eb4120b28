"""Numerical helpers: Gaussian quadrature, random streams and SPD algebra."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.hermite import hermgauss

# Quadrature orders for 1-d and tensorized 2-d Gaussian expectations.
GH_NODES_1D = 129
GH_NODES_2D = 65
EIGEN_FLOOR = 1e-10


@dataclass(frozen=True)
class GaussHermite:
    """Nodes and weights for expectations under the standard normal.

    ``E[f(G)] ≈ Σ_i weights[i] · f(nodes[i])`` for ``G ~ N(0, 1)``;
    the weights sum to one.

    Attributes:
        nodes: Standard-normal quadrature nodes
        weights: Matching probability weights
    """

    nodes: np.ndarray
    weights: np.ndarray


@lru_cache(maxsize=8)
def gauss_hermite(order: int = GH_NODES_1D) -> GaussHermite:
    """Return Gauss–Hermite nodes/weights rescaled to the standard normal.

    Args:
        order: Number of nodes (at least 2)

    Returns:
        GaussHermite: Read-only nodes and weights

    Raises:
        ValueError: If order < 2

    Examples:
        >>> rule = gauss_hermite(129)
        >>> float(rule.weights @ rule.nodes**2)
        1.0
    """
    if order < 2:
        raise ValueError(f"Quadrature order must be >= 2, got {order}")
    x, w = hermgauss(order)
    nodes = np.sqrt(2.0) * x
    weights = w / np.sqrt(np.pi)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GaussHermite(nodes=nodes, weights=weights)


def gaussian_expectation(
    fn: Callable[[np.ndarray], np.ndarray],
    mean: float,
    sd: float,
    order: int = GH_NODES_1D,
) -> float | np.ndarray:
    """Compute ``E[fn(mean + sd·G)]`` for ``G ~ N(0, 1)``.

    ``fn`` is called once on the vector of nodes. If it returns a 2-d array
    with the node axis first, the expectation is taken along that axis.
    """
    rule = gauss_hermite(order)
    values = np.asarray(fn(mean + sd * rule.nodes))
    return rule.weights @ values


def gaussian_expectation_with_node(
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    mean: float,
    sd: float,
    order: int = GH_NODES_1D,
) -> float:
    """Like gaussian_expectation but ``fn(z, g)`` also sees the standard node ``g``."""
    rule = gauss_hermite(order)
    return float(rule.weights @ np.asarray(fn(mean + sd * rule.nodes, rule.nodes)))


def clamp_to_spd(cov: np.ndarray, floor: float = EIGEN_FLOOR) -> np.ndarray:
    """Symmetrize and floor the eigenvalues of a covariance matrix.

    Args:
        cov: Square matrix, expected symmetric PSD up to rounding
        floor: Smallest eigenvalue allowed in the result

    Returns:
        np.ndarray: SPD matrix with eigenvalues at least ``floor``

    Raises:
        ValueError: If the matrix is not finite
    """
    cov = np.asarray(cov, dtype=float)
    if not np.all(np.isfinite(cov)):
        raise ValueError("Covariance has non-finite entries")
    sym = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    return (eigvecs * np.maximum(eigvals, floor)) @ eigvecs.T


def bivariate_gaussian_expectation(
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    mean: np.ndarray,
    cov: np.ndarray,
    order: int = GH_NODES_2D,
) -> float:
    """Compute ``E[fn(Z1, Z2)]`` for a bivariate normal ``(Z1, Z2)``.

    Tensor-product Gauss–Hermite rule mapped through the Cholesky factor of
    ``cov`` after clamping it to SPD.

    Args:
        fn: Vectorized integrand taking the two coordinates
        mean: Length-2 mean vector
        cov: 2×2 covariance matrix
        order: Nodes per axis

    Returns:
        float: Quadrature value of the expectation

    Raises:
        ValueError: If the clamped covariance still fails Cholesky
    """
    rule = gauss_hermite(order)
    try:
        chol = np.linalg.cholesky(clamp_to_spd(cov))
    except np.linalg.LinAlgError as e:
        raise ValueError(f"Covariance not positive definite after clamp: {cov!r}") from e
    g1, g2 = np.meshgrid(rule.nodes, rule.nodes, indexing="ij")
    z1 = mean[0] + chol[0, 0] * g1
    z2 = mean[1] + chol[1, 0] * g1 + chol[1, 1] * g2
    weights = np.outer(rule.weights, rule.weights)
    return float(np.sum(weights * fn(z1, z2)))


def make_rng(seed: int, *spawn_key: int) -> np.random.Generator:
    """Build a Philox generator for one independent substream.

    The stream is keyed by ``seed`` and the optional ``spawn_key`` path
    (e.g. grid index and replicate), so replicates never share state no
    matter which worker runs them.

    Args:
        seed: Non-negative 64-bit experiment seed
        *spawn_key: Non-negative integers naming the substream

    Returns:
        np.random.Generator: Counter-based generator
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"Seed must be a 64-bit unsigned integer, got {seed}")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in spawn_key))
    return np.random.Generator(np.random.Philox(sequence))


def replicate_seed(seed: int, replicate: int) -> int:
    """Per-replicate seed ``seed ⊕ replicate`` recorded in the CSV."""
    return int(seed) ^ int(replicate)


def symmetric_sqrt(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(M^{1/2}, M^{-1/2})`` for a symmetric positive definite ``M``.

    Raises:
        ValueError: If ``M`` is not symmetric positive definite
        np.linalg.LinAlgError: If the eigendecomposition fails
    """
    matrix = np.asarray(matrix, dtype=float)
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(matrix).max())):
        raise ValueError("Matrix is not symmetric")
    eigvals, eigvecs = np.linalg.eigh(matrix)
    if eigvals.min() <= 0:
        raise ValueError(f"Matrix is not positive definite (smallest eigenvalue {eigvals.min():.3e})")
    root = np.sqrt(eigvals)
    return (eigvecs * root) @ eigvecs.T, (eigvecs / root) @ eigvecs.T


def is_identity(matrix: np.ndarray) -> bool:
    """True when ``matrix`` is exactly the identity."""
    matrix = np.asarray(matrix)
    return matrix.ndim == 2 and matrix.shape[0] == matrix.shape[1] and np.array_equal(
        matrix, np.eye(matrix.shape[0])
    )
