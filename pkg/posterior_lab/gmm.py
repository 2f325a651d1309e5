"""Analytic Gaussian-mixture prior with closed-form log-density, score and Hessian.

All queries take the mixture convolved with Gaussian noise (isotropic or diagonal), so the
same object serves as p(x0) and as every perturbed marginal p_t. Points may be a single vector
of shape (d,) or a batch of shape (..., d); scalar-valued results come back as float for a
single vector.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp, softmax

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
Seed = int | Sequence[int]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class NoiseCov:
    """Gaussian noise covariance: isotropic (scalar variance) or diagonal (per-coordinate).

    A diagonal entry of exactly 0 leaves that coordinate unnoised (inpainting limit).
    """

    kind: Literal["isotropic", "diagonal"]
    values: FloatArray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if self.kind == "isotropic":
            if values.ndim != 0:
                raise ValueError("isotropic noise takes a single variance")
        elif self.kind == "diagonal":
            if values.ndim != 1 or values.size == 0:
                raise ValueError("diagonal noise takes a non-empty variance vector")
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("noise variances must be finite and non-negative")
        object.__setattr__(self, "values", values)

    @classmethod
    def isotropic(cls, variance: float) -> NoiseCov:
        return cls("isotropic", np.asarray(variance, dtype=np.float64))

    @classmethod
    def diagonal(cls, variances: ArrayLike) -> NoiseCov:
        return cls("diagonal", np.asarray(variances, dtype=np.float64))

    def as_diagonal(self, dim: int) -> FloatArray:
        """Variance vector of length `dim`."""
        if self.kind == "isotropic":
            return np.full(dim, float(self.values))
        if self.values.shape[0] != dim:
            raise ValueError(f"noise has {self.values.shape[0]} entries, expected {dim}")
        return self.values.copy()

    def __add__(self, other: NoiseCov) -> NoiseCov:
        if self.kind == "isotropic" and other.kind == "isotropic":
            return NoiseCov.isotropic(float(self.values) + float(other.values))
        dim = self.values.shape[0] if self.kind == "diagonal" else other.values.shape[0]
        return NoiseCov.diagonal(self.as_diagonal(dim) + other.as_diagonal(dim))


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Weighted diagonal-covariance Gaussian components.

    weights: (K,), means: (K, d), variances: (K, d).
    """

    weights: FloatArray
    means: FloatArray
    variances: FloatArray

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if weights.ndim != 1 or weights.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if means.shape != (weights.size, means.shape[1]) or means.shape[1] == 0:
            raise ValueError(f"means must have shape (K, d) with K={weights.size}")
        if variances.shape != means.shape:
            raise ValueError("every component needs a variance vector of length dim")
        if np.any(weights <= 0):
            raise ValueError("all weights must be > 0")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 (got {weights.sum()!r})")
        if np.any(variances <= 0):
            raise ValueError("all variances must be strictly positive")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(variances))):
            raise ValueError("means and variances must be finite")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def n_components(self) -> int:
        return int(self.weights.size)

    @classmethod
    def from_components(cls, components: Sequence[Mapping[str, Any]]) -> GaussianMixture:
        """Build from `[{weight, mean, var}, ...]` (the GMM definition file layout)."""
        if not components:
            raise ValueError("at least one component is required")
        return cls(
            weights=np.array([c["weight"] for c in components], dtype=np.float64),
            means=np.array([c["mean"] for c in components], dtype=np.float64),
            variances=np.array([c["var"] for c in components], dtype=np.float64),
        )

    def to_components(self) -> list[dict[str, Any]]:
        return [
            {"weight": float(w), "mean": m.tolist(), "var": v.tolist()}
            for w, m, v in zip(self.weights, self.means, self.variances)
        ]

    def convolve(self, noise: NoiseCov) -> GaussianMixture:
        """The mixture convolved with `noise` (variances add)."""
        return GaussianMixture(self.weights, self.means, self.variances + noise.as_diagonal(self.dim))

    def marginal(self, axis: int) -> GaussianMixture:
        """One-dimensional marginal along coordinate `axis`."""
        if not 0 <= axis < self.dim:
            raise ValueError(f"axis {axis} out of range for dim {self.dim}")
        return GaussianMixture(self.weights, self.means[:, [axis]], self.variances[:, [axis]])

    def mean(self) -> FloatArray:
        return self.weights @ self.means

    def variance(self) -> FloatArray:
        """Per-coordinate variance of the mixture."""
        second = self.weights @ (self.variances + self.means**2)
        return second - self.mean() ** 2


def _as_output(a: FloatArray) -> FloatArray | float:
    return float(a) if a.ndim == 0 else a


def _check_point(gmm: GaussianMixture, x: ArrayLike) -> FloatArray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != gmm.dim:
        raise ValueError(f"point has trailing dimension {x.shape[-1:]}, expected {gmm.dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("point contains non-finite values")
    return x


def _component_terms(
    gmm: GaussianMixture, x: FloatArray, noise: NoiseCov
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Per-component log(w_k N_k(x)), displacement (mu_k - x) and total variances."""
    total = gmm.variances + noise.as_diagonal(gmm.dim)  # (K, d)
    diff = gmm.means - x[..., None, :]  # (..., K, d)
    log_norm = -0.5 * np.sum(diff**2 / total + np.log(total) + _LOG_2PI, axis=-1)
    return np.log(gmm.weights) + log_norm, diff, total


def log_density_perturbed(gmm: GaussianMixture, x: ArrayLike, noise: NoiseCov) -> FloatArray | float:
    """log sum_k w_k N(x; mu_k, diag(v_k) + noise), log-sum-exp stabilized."""
    terms, _, _ = _component_terms(gmm, _check_point(gmm, x), noise)
    return _as_output(logsumexp(terms, axis=-1))


def responsibilities(gmm: GaussianMixture, x: ArrayLike, noise: NoiseCov) -> FloatArray:
    """Posterior component probabilities gamma_k(x), shape (..., K)."""
    terms, _, _ = _component_terms(gmm, _check_point(gmm, x), noise)
    return softmax(terms, axis=-1)


def score_perturbed(gmm: GaussianMixture, x: ArrayLike, noise: NoiseCov) -> FloatArray:
    """Gradient of the perturbed log-density: sum_k gamma_k (mu_k - x) / (v_k + noise)."""
    terms, diff, total = _component_terms(gmm, _check_point(gmm, x), noise)
    gamma = softmax(terms, axis=-1)
    return np.einsum("...k,...kd->...d", gamma, diff / total)


def hessian_perturbed(gmm: GaussianMixture, x: ArrayLike, noise: NoiseCov) -> FloatArray:
    """Hessian of the perturbed log-density, shape (..., d, d).

    H = -sum_k gamma_k Lambda_k + sum_k gamma_k g_k g_k^T - s s^T with g_k = Lambda_k (mu_k - x)
    and s the score.
    """
    terms, diff, total = _component_terms(gmm, _check_point(gmm, x), noise)
    gamma = softmax(terms, axis=-1)
    g = diff / total
    s = np.einsum("...k,...kd->...d", gamma, g)
    curvature = np.einsum("...k,kd->...d", gamma, 1.0 / total)
    outer = np.einsum("...k,...ki,...kj->...ij", gamma, g, g)
    hess = outer - s[..., :, None] * s[..., None, :]
    idx = np.arange(gmm.dim)
    hess[..., idx, idx] -= curvature
    return hess


def score_vp(gmm: GaussianMixture, x: ArrayLike, alphabar: float) -> FloatArray:
    """Score of the VP-perturbed density int p(x0) N(x; sqrt(ab) x0, (1 - ab) I) dx0.

    Evaluated through the VE density at x / sqrt(ab) with variance (1 - ab) / ab.
    """
    if not 0.0 < alphabar <= 1.0:
        raise ValueError(f"alphabar must lie in (0, 1], got {alphabar}")
    root = np.sqrt(alphabar)
    x = np.asarray(x, dtype=np.float64)
    return score_perturbed(gmm, x / root, NoiseCov.isotropic((1.0 - alphabar) / alphabar)) / root


def sample_prior(gmm: GaussianMixture, rng_seed: Seed, n: int) -> FloatArray:
    """Ancestral draw: categorical component, then diagonal Gaussian. Shape (n, d)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(rng_seed)
    comp = rng.choice(gmm.n_components, size=n, p=gmm.weights)
    eps = rng.standard_normal((n, gmm.dim))
    return gmm.means[comp] + np.sqrt(gmm.variances[comp]) * eps


PRESETS: dict[str, GaussianMixture] = {
    # Two-well toy: mu1=(-2.0, 2.4), mu2=(1.5, 0.0), sd1=(0.5, 0.6), sd2=(0.3, 0.45)
    "doublewell2d": GaussianMixture(
        weights=np.array([0.5, 0.5]),
        means=np.array([[-2.0, 2.4], [1.5, 0.0]]),
        variances=np.array([[0.5**2, 0.6**2], [0.3**2, 0.45**2]]),
    ),
    "gauss1d": GaussianMixture(np.array([1.0]), np.array([[0.0]]), np.array([[1.0]])),
    "gauss2d": GaussianMixture(np.array([1.0]), np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]])),
    "bimodal1d": GaussianMixture(
        np.array([0.5, 0.5]), np.array([[-1.0], [1.0]]), np.array([[0.25], [0.25]])
    ),
}


def get_preset(name: str) -> GaussianMixture:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown prior preset {name!r}; known: {sorted(PRESETS)}") from None
