"""Shared fixtures and numerical oracles (finite differences, quadrature, conjugate Gaussians)."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from posterior_lab.gmm import GaussianMixture, get_preset

GRID = np.linspace(-10.0, 10.0, 40001)
_LOG_2PI = np.log(2.0 * np.pi)


@pytest.fixture
def doublewell() -> GaussianMixture:
    return get_preset("doublewell2d")


@pytest.fixture
def gauss1d() -> GaussianMixture:
    return get_preset("gauss1d")


@pytest.fixture(autouse=True)
def _isolated_settings(monkeypatch: pytest.MonkeyPatch, tmp_path) -> None:
    """Keep env-driven settings deterministic and outputs out of the repo."""
    for name in ("JOBS", "BATCH_CHUNK_SIZE", "WHAM_TOL", "WHAM_MAX_ITER"):
        monkeypatch.delenv(f"POSTERIOR_LAB_{name}", raising=False)
    monkeypatch.setenv("POSTERIOR_LAB_OUTPUT_DIR", str(tmp_path / "runs"))


def random_gmm(rng: np.random.Generator, dim: int, n_components: int) -> GaussianMixture:
    weights = rng.uniform(0.2, 1.0, n_components)
    weights /= weights.sum()
    weights[-1] = 1.0 - weights[:-1].sum()
    return GaussianMixture(
        weights=weights,
        means=rng.uniform(-2.0, 2.0, (n_components, dim)),
        variances=rng.uniform(0.1, 1.0, (n_components, dim)),
    )


def gaussian(mean: float | np.ndarray, var: float | np.ndarray, dim: int = 1) -> GaussianMixture:
    return GaussianMixture(
        weights=np.array([1.0]),
        means=np.broadcast_to(np.asarray(mean, dtype=float), (dim,))[None, :],
        variances=np.broadcast_to(np.asarray(var, dtype=float), (dim,))[None, :],
    )


def fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        grad[j] = (f(x + e) - f(x - e)) / (2.0 * h)
    return grad


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference Jacobian; column j is d f / d x_j."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def _log_normal(x: np.ndarray, mean: np.ndarray | float, var: float) -> np.ndarray:
    return -0.5 * ((x - mean) ** 2 / var + np.log(var) + _LOG_2PI)


def quadrature_log_posterior(
    gmm: GaussianMixture,
    x_t: np.ndarray,
    y: np.ndarray,
    d: np.ndarray,
    sigma_y: float,
    sigma_t: float,
) -> float:
    """log of int p(x0) N(x_t; x0, sigma_t^2 I) N(y; diag(d) x0, sigma_y^2 I) dx0 by trapezoid.

    Components are diagonal, so the integral is a per-component product of 1D integrals.
    Coordinates with d_i == 0 carry no likelihood factor. Equals log p(x_t | y) + const.
    """
    terms = np.log(gmm.weights).copy()
    for k in range(gmm.n_components):
        for i in range(gmm.dim):
            log_f = _log_normal(GRID, gmm.means[k, i], gmm.variances[k, i])
            log_f += _log_normal(x_t[i], GRID, sigma_t**2)
            if d[i] != 0:
                log_f += _log_normal(y[i], d[i] * GRID, sigma_y**2)
            peak = log_f.max()
            terms[k] += peak + np.log(trapezoid(np.exp(log_f - peak), GRID))
    return float(logsumexp(terms))


def quadrature_biased_marginal(
    gmm: GaussianMixture, axis: int, center: float, sigma_y: float
) -> tuple[float, float]:
    """Mean and std of p(x_axis) N(center; x_axis, sigma_y^2) by 1D quadrature."""
    marginal = np.zeros_like(GRID)
    for k in range(gmm.n_components):
        marginal += gmm.weights[k] * np.exp(_log_normal(GRID, gmm.means[k, axis], gmm.variances[k, axis]))
    density = marginal * np.exp(-0.5 * (GRID - center) ** 2 / sigma_y**2)
    z = trapezoid(density, GRID)
    mean = trapezoid(GRID * density, GRID) / z
    var = trapezoid((GRID - mean) ** 2 * density, GRID) / z
    return float(mean), float(np.sqrt(var))


def conjugate_posterior(
    mu0: float, var0: float, y: float, sigma_y: float
) -> tuple[float, float]:
    """x0 | y for x0 ~ N(mu0, var0), y = x0 + sigma_y eta."""
    var = 1.0 / (1.0 / var0 + 1.0 / sigma_y**2)
    return var * (mu0 / var0 + y / sigma_y**2), var
