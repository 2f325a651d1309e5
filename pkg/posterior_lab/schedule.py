"""Noise schedules (VP linear betas, VE geometric sigmas) and the tilde reparameterization.

Levels are 1-based: level t in 1..N. Arrays are stored 0-based, so level t lives at index t - 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from posterior_lab.gmm import NoiseCov

if TYPE_CHECKING:
    from posterior_lab.models.experiment import ScheduleSpec

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """VE sigma sequence or VP alphabar/beta sequences, N levels each."""

    kind: Literal["vp", "ve"]
    sigmas: FloatArray | None = None
    alphabars: FloatArray | None = None
    betas: FloatArray | None = None

    def __post_init__(self) -> None:
        if self.kind == "ve":
            if self.sigmas is None:
                raise ValueError("VE schedule needs sigmas")
            sigmas = np.asarray(self.sigmas, dtype=np.float64)
            if sigmas.ndim != 1 or sigmas.size < 2:
                raise ValueError("VE schedule needs at least 2 levels")
            if np.any(sigmas <= 0) or np.any(np.diff(sigmas) <= 0):
                raise ValueError("VE sigmas must be positive and strictly increasing")
            object.__setattr__(self, "sigmas", sigmas)
        elif self.kind == "vp":
            if self.alphabars is None or self.betas is None:
                raise ValueError("VP schedule needs alphabars and betas")
            alphabars = np.asarray(self.alphabars, dtype=np.float64)
            betas = np.asarray(self.betas, dtype=np.float64)
            if alphabars.ndim != 1 or alphabars.shape != betas.shape or alphabars.size < 2:
                raise ValueError("VP alphabars and betas must be equal-length vectors (N >= 2)")
            if np.any(betas <= 0) or np.any(betas >= 1):
                raise ValueError("VP betas must lie in (0, 1)")
            if np.max(np.abs(np.cumprod(1.0 - betas) - alphabars)) > 1e-12:
                raise ValueError("VP alphabars must equal the cumulative product of (1 - beta)")
            object.__setattr__(self, "alphabars", alphabars)
            object.__setattr__(self, "betas", betas)
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @property
    def n_steps(self) -> int:
        levels = self.sigmas if self.kind == "ve" else self.alphabars
        assert levels is not None
        return int(levels.size)

    @property
    def ve_sigmas(self) -> FloatArray:
        """VE-equivalent noise level of every step (sqrt((1 - ab) / ab) for VP)."""
        if self.kind == "ve":
            assert self.sigmas is not None
            return self.sigmas
        assert self.alphabars is not None
        return np.sqrt((1.0 - self.alphabars) / self.alphabars)

    def _check_level(self, t: int) -> int:
        if not 1 <= t <= self.n_steps:
            raise ValueError(f"step t={t} out of range 1..{self.n_steps}")
        return t - 1

    def sigma(self, t: int) -> float:
        return float(self.ve_sigmas[self._check_level(t)])

    def alphabar(self, t: int) -> float:
        if self.kind != "vp":
            raise ValueError("alphabar is defined for VP schedules only")
        assert self.alphabars is not None
        return float(self.alphabars[self._check_level(t)])

    def describe(self) -> dict[str, float | int | str]:
        return {
            "process": self.kind,
            "steps": self.n_steps,
            "max_sigma": float(self.ve_sigmas[-1]),
            "min_sigma": float(self.ve_sigmas[0]),
        }


def make_vp_linear(N: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """DDPM schedule: betas linear from beta_min to beta_max, alphabar the running product."""
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    if not 0.0 < beta_min < beta_max < 1.0:
        raise ValueError(f"need 0 < beta_min < beta_max < 1, got ({beta_min}, {beta_max})")
    betas = np.linspace(beta_min, beta_max, N)
    return NoiseSchedule("vp", alphabars=np.cumprod(1.0 - betas), betas=betas)


def make_ve_geometric(N: int, sigma_min: float = 0.01, sigma_max: float = 50.0) -> NoiseSchedule:
    """VE schedule with sigmas geometrically spaced from sigma_min to sigma_max."""
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    if not 0.0 < sigma_min < sigma_max:
        raise ValueError(f"need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})")
    return NoiseSchedule("ve", sigmas=np.geomspace(sigma_min, sigma_max, N))


def respace(schedule: NoiseSchedule, steps: int) -> NoiseSchedule:
    """Evenly strided subset of `steps` levels, always keeping the first and last.

    VP betas are recomputed as 1 - ab_i / ab_{i-1} so the product identity still holds.
    """
    n = schedule.n_steps
    if not 2 <= steps <= n:
        raise ValueError(f"steps must lie in 2..{n}, got {steps}")
    if steps == n:
        return schedule
    idx = np.unique(np.round(np.linspace(0, n - 1, steps)).astype(np.int64))
    if schedule.kind == "ve":
        assert schedule.sigmas is not None
        return NoiseSchedule("ve", sigmas=schedule.sigmas[idx])
    assert schedule.alphabars is not None
    alphabars = schedule.alphabars[idx]
    prev = np.concatenate([[1.0], alphabars[:-1]])
    betas = 1.0 - alphabars / prev
    # Telescoped product drifts by a few ulps; pin the stored alphabars to it.
    return NoiseSchedule("vp", alphabars=np.cumprod(1.0 - betas), betas=betas)


def build_schedule(spec: ScheduleSpec) -> NoiseSchedule:
    """Schedule from config: build `base_steps` levels, then respace down to `steps`."""
    base_steps = max(spec.base_steps, spec.steps)
    if spec.process == "vp":
        base = make_vp_linear(base_steps, spec.beta_min, spec.beta_max)
    else:
        base = make_ve_geometric(base_steps, spec.sigma_min, spec.sigma_max)
    schedule = respace(base, spec.steps)
    logger.debug("Schedule %s", schedule.describe())
    return schedule


def vp_to_ve_sigma(schedule: NoiseSchedule, t: int) -> float:
    """VE noise level equivalent to VP level t: sqrt((1 - ab_t) / ab_t)."""
    ab = schedule.alphabar(t)
    return float(np.sqrt((1.0 - ab) / ab))


def alphabar_from_sigma(sigma: float) -> float:
    return 1.0 / (1.0 + sigma * sigma)


def nearest_step(schedule: NoiseSchedule, alphabar: float) -> int:
    """VP level whose alphabar is closest to `alphabar` (1-based)."""
    if schedule.kind != "vp":
        raise ValueError("nearest_step needs a VP schedule")
    assert schedule.alphabars is not None
    return int(np.argmin(np.abs(schedule.alphabars - alphabar))) + 1


@dataclass(frozen=True, eq=False)
class TildeParams:
    """Precision-weighted combination of measurement and iterate.

    sigma_tilde_sq = (sigma_y^-2 + sigma_t^-2)^-1, x_tilde = sigma_tilde_sq (y / sigma_y^2 + x / sigma_t^2),
    guidance_var = sigma_y^2 + sigma_t^2, prior_coef = sigma_tilde_sq / sigma_t^2.
    """

    sigma_tilde_sq: float
    x_tilde: FloatArray
    guidance_var: float
    prior_coef: float


def _check_levels(sigma_y: float, sigma_t: float) -> None:
    if not (np.isfinite(sigma_y) and sigma_y > 0):
        raise ValueError(f"sigma_y must be > 0, got {sigma_y}")
    if not (np.isfinite(sigma_t) and sigma_t > 0):
        raise ValueError(f"sigma_t must be > 0, got {sigma_t}")


def tilde_params(y: ArrayLike, x_t: ArrayLike, sigma_y: float, sigma_t: float) -> TildeParams:
    _check_levels(sigma_y, sigma_t)
    y = np.asarray(y, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if y.shape[-1:] != x_t.shape[-1:]:
        raise ValueError(f"y and x_t lengths differ: {y.shape} vs {x_t.shape}")
    var_y = sigma_y * sigma_y
    var_t = sigma_t * sigma_t
    denom = var_y + var_t
    return TildeParams(
        sigma_tilde_sq=var_y * var_t / denom,
        x_tilde=(var_t * y + var_y * x_t) / denom,
        guidance_var=denom,
        prior_coef=var_y / denom,
    )


def tilde_params_vp(y: ArrayLike, x_t: ArrayLike, sigma_y: float, alphabar: float) -> TildeParams:
    """VP iterate mapped to VE coordinates (x / sqrt(ab), sigma^2 = (1 - ab) / ab) first."""
    if not 0.0 < alphabar < 1.0:
        raise ValueError(f"alphabar must lie in (0, 1), got {alphabar}")
    x_ve = np.asarray(x_t, dtype=np.float64) / np.sqrt(alphabar)
    return tilde_params(y, x_ve, sigma_y, float(np.sqrt((1.0 - alphabar) / alphabar)))


def tilde_cov_inpaint(mask: ArrayLike, sigma_y: float, sigma_t: float) -> NoiseCov:
    """Sigma_tilde for a 0/1 mask; observed entries are 0 when sigma_y == 0."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 1 or not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask must be a 0/1 vector")
    if not (np.isfinite(sigma_y) and sigma_y >= 0):
        raise ValueError(f"sigma_y must be >= 0, got {sigma_y}")
    if not (np.isfinite(sigma_t) and sigma_t > 0):
        raise ValueError(f"sigma_t must be > 0, got {sigma_t}")
    var_t = sigma_t * sigma_t
    if not mask.any():
        return NoiseCov.isotropic(var_t)
    var_y = sigma_y * sigma_y
    observed = var_y * var_t / (var_y + var_t)
    return NoiseCov.diagonal(np.where(mask == 1, observed, var_t))
