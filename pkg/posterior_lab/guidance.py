"""Posterior and likelihood scores used to guide reverse diffusion.

VE convention throughout (x_t = x0 + sigma_t * eps); the `_vp` entry points map a VP iterate to
VE coordinates, evaluate there and map the result back. Every function accepts a single point
(d,) or a batch (..., d); a batched measurement y must broadcast against x_t.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from posterior_lab.gmm import (
    GaussianMixture,
    NoiseCov,
    hessian_perturbed,
    score_perturbed,
    score_vp,
)
from posterior_lab.operators import LinearOperator, Measurement
from posterior_lab.schedule import NoiseSchedule, nearest_step, tilde_params

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

GuidanceMethod = Literal["none", "exact", "dps", "dpsw"]
ZetaMode = Literal["constant", "residual_norm"]


@dataclass(frozen=True)
class GuidanceSpec:
    """Which score drives each reverse step, and with what measurement."""

    method: GuidanceMethod = "none"
    measurement: Measurement | None = None
    zeta_prime: float = 1.0
    zeta_mode: ZetaMode = "constant"
    enhanced: bool = False
    parity_tau: bool = False

    def __post_init__(self) -> None:
        if self.method not in ("none", "exact", "dps", "dpsw"):
            raise ValueError(f"unknown guidance method {self.method!r}")
        if self.method != "none" and self.measurement is None:
            raise ValueError(f"guidance method {self.method!r} needs a measurement")
        if not (np.isfinite(self.zeta_prime) and self.zeta_prime >= 0):
            raise ValueError(f"zeta_prime must be >= 0, got {self.zeta_prime}")
        if self.zeta_mode not in ("constant", "residual_norm"):
            raise ValueError(f"unknown zeta mode {self.zeta_mode!r}")
        if self.enhanced:
            if self.method != "dpsw":
                raise ValueError("enhanced step size applies to dpsw only")
            if self.measurement is None or self.measurement.op.kind != "mask":
                raise ValueError("enhanced step size needs a mask operator")
        if self.method == "dpsw" and self.measurement is not None:
            if self.measurement.op.kind == "diagonal":
                raise ValueError("dpsw reference task needs an identity or mask operator")
            if self.measurement.sigma_y <= 0:
                raise ValueError("dpsw reference task needs sigma_y > 0")
            if self.measurement.op.kind == "mask" and not self.measurement.op.observed.any():
                raise ValueError("dpsw reference mask must observe at least one coordinate")
        if self.parity_tau and self.method != "exact":
            raise ValueError("parity_tau applies to the exact method only")

    @property
    def conditional(self) -> bool:
        return self.method != "none"


@dataclass(frozen=True, eq=False)
class GuidanceOutput:
    """posterior_score = prior_term + guidance_term."""

    posterior_score: FloatArray
    prior_term: FloatArray
    guidance_term: FloatArray


@dataclass(frozen=True, eq=False)
class DpsWeight:
    """w_t per point; `degenerate` marks points where the reference score vanished."""

    w: FloatArray | float
    degenerate: NDArray[np.bool_] | bool


def _check_sigma_t(sigma_t: float) -> None:
    if not (np.isfinite(sigma_t) and sigma_t > 0):
        raise ValueError(f"sigma_t must be > 0, got {sigma_t}")


def _output(prior: FloatArray, guidance: FloatArray) -> GuidanceOutput:
    return GuidanceOutput(posterior_score=prior + guidance, prior_term=prior, guidance_term=guidance)


def exact_denoising_score(
    gmm: GaussianMixture, x_t: ArrayLike, y: ArrayLike, sigma_y: float, sigma_t: float
) -> GuidanceOutput:
    """Posterior score for A = I in terms of the prior score at (x_tilde, sigma_tilde)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    tp = tilde_params(y, x_t, sigma_y, sigma_t)
    prior = tp.prior_coef * score_perturbed(gmm, tp.x_tilde, NoiseCov.isotropic(tp.sigma_tilde_sq))
    return _output(prior, -(x_t - y) / tp.guidance_var)


def _diagonal_posterior(
    gmm: GaussianMixture,
    x_t: FloatArray,
    y: FloatArray,
    d: FloatArray,
    sigma_y: float,
    sigma_t: float,
) -> GuidanceOutput:
    """Posterior score for A = diag(d), coordinate by coordinate.

    Observed (d_i != 0): denom = sigma_y^2 + d_i^2 sigma_t^2, mean (sigma_t^2 d_i y_i + sigma_y^2 x_i) / denom,
    covariance sigma_y^2 sigma_t^2 / denom, guidance -d_i (d_i x_i - y_i) / denom.
    Unobserved (d_i == 0): unconditional coordinate, no guidance.
    """
    var_y = sigma_y * sigma_y
    var_t = sigma_t * sigma_t
    observed = d != 0
    denom = np.where(observed, var_y + d * d * var_t, 1.0)
    coef = np.where(observed, var_y / denom, 1.0)
    cov = np.where(observed, var_y * var_t / denom, var_t)
    mean = np.where(observed, (var_t * d * y + var_y * x_t) / denom, x_t)
    guidance = np.where(observed, -d * (d * x_t - y) / denom, 0.0)
    prior = coef * score_perturbed(gmm, mean, NoiseCov.diagonal(cov))
    return _output(prior, guidance)


def exact_inpainting_score(
    gmm: GaussianMixture,
    x_t: ArrayLike,
    mask: ArrayLike,
    y: ArrayLike,
    sigma_y: float,
    sigma_t: float,
) -> GuidanceOutput:
    """Posterior score for A = diag(mask); sigma_y = 0 is the noiseless-pixel limit."""
    _check_sigma_t(sigma_t)
    if not (np.isfinite(sigma_y) and sigma_y >= 0):
        raise ValueError(f"sigma_y must be >= 0, got {sigma_y}")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 1 or not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask must be a 0/1 vector")
    x_t = np.asarray(x_t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64) * mask
    return _diagonal_posterior(gmm, x_t, y, mask, sigma_y, sigma_t)


def exact_invertible_score(
    gmm: GaussianMixture,
    x_t: ArrayLike,
    d: ArrayLike,
    y: ArrayLike,
    sigma_y: float,
    sigma_t: float,
) -> GuidanceOutput:
    """Posterior score for an invertible diagonal A = diag(d)."""
    _check_sigma_t(sigma_t)
    if not (np.isfinite(sigma_y) and sigma_y > 0):
        raise ValueError(f"sigma_y must be > 0, got {sigma_y}")
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1 or np.any(d == 0):
        raise ValueError("d must be a vector of nonzero entries")
    return _diagonal_posterior(
        gmm, np.asarray(x_t, dtype=np.float64), np.asarray(y, dtype=np.float64), d, sigma_y, sigma_t
    )


def posterior_score(
    gmm: GaussianMixture, x_t: ArrayLike, measurement: Measurement, sigma_t: float
) -> GuidanceOutput:
    """Exact posterior score dispatched on the operator kind."""
    op = measurement.op
    if op.dim != gmm.dim:
        raise ValueError(f"measurement dim {op.dim} does not match prior dim {gmm.dim}")
    if op.kind == "identity" and measurement.sigma_y > 0:
        return exact_denoising_score(gmm, x_t, measurement.y, measurement.sigma_y, sigma_t)
    if op.kind == "diagonal":
        return exact_invertible_score(gmm, x_t, op.diag, measurement.y, measurement.sigma_y, sigma_t)
    # Masks, and the noiseless identity as an all-observed mask.
    return exact_inpainting_score(
        gmm, x_t, op.observed.astype(np.float64), measurement.y, measurement.sigma_y, sigma_t
    )


def exact_noisy_likelihood_score(
    gmm: GaussianMixture, x_t: ArrayLike, y: ArrayLike, sigma_y: float, sigma_t: float
) -> FloatArray:
    """Denoising posterior score minus the unconditional score."""
    out = exact_denoising_score(gmm, x_t, y, sigma_y, sigma_t)
    return out.posterior_score - score_perturbed(gmm, x_t, NoiseCov.isotropic(sigma_t * sigma_t))


def likelihood_score(
    gmm: GaussianMixture, x_t: ArrayLike, measurement: Measurement, sigma_t: float
) -> FloatArray:
    """Exact noisy likelihood score for any supported operator."""
    out = posterior_score(gmm, x_t, measurement, sigma_t)
    return out.posterior_score - score_perturbed(gmm, x_t, NoiseCov.isotropic(sigma_t * sigma_t))


def tweedie_mean(
    gmm: GaussianMixture,
    x_t: ArrayLike,
    sigma_t: float | None = None,
    alphabar_t: float | None = None,
) -> FloatArray:
    """E[x0 | x_t]: x + sigma^2 s (VE) or (x + (1 - ab) s) / sqrt(ab) (VP). Give exactly one level."""
    if (sigma_t is None) == (alphabar_t is None):
        raise ValueError("pass exactly one of sigma_t or alphabar_t")
    x_t = np.asarray(x_t, dtype=np.float64)
    if sigma_t is not None:
        _check_sigma_t(sigma_t)
        var_t = sigma_t * sigma_t
        return x_t + var_t * score_perturbed(gmm, x_t, NoiseCov.isotropic(var_t))
    assert alphabar_t is not None
    return (x_t + (1.0 - alphabar_t) * score_vp(gmm, x_t, alphabar_t)) / np.sqrt(alphabar_t)


def _zeta_array(zeta_t: ArrayLike) -> FloatArray:
    zeta = np.asarray(zeta_t, dtype=np.float64)
    return zeta[..., None] if zeta.ndim else zeta


def dps_score(
    gmm: GaussianMixture,
    x_t: ArrayLike,
    measurement: Measurement,
    sigma_t: float,
    zeta_t: ArrayLike,
) -> FloatArray:
    """-zeta_t grad ||y - A xhat0(x_t)||^2 = 2 zeta_t J^T A^T (y - A xhat0), J = I + sigma_t^2 H.

    `zeta_t` is a scalar or one value per point.
    """
    _check_sigma_t(sigma_t)
    x_t = np.asarray(x_t, dtype=np.float64)
    var_t = sigma_t * sigma_t
    noise = NoiseCov.isotropic(var_t)
    xhat0 = x_t + var_t * score_perturbed(gmm, x_t, noise)
    jac = var_t * hessian_perturbed(gmm, x_t, noise)
    idx = np.arange(gmm.dim)
    jac[..., idx, idx] += 1.0
    back = measurement.op.apply_transpose(measurement.residual(xhat0))
    # J is symmetric.
    grad = np.einsum("...ij,...j->...i", jac, back)
    return 2.0 * _zeta_array(zeta_t) * grad


def dps_step_size(
    gmm: GaussianMixture,
    x_t: ArrayLike,
    measurement: Measurement,
    sigma_t: float,
    zeta_prime: float,
    mode: ZetaMode = "constant",
) -> FloatArray | float:
    """zeta_t = zeta' (constant) or zeta' / ||y - A xhat0|| (residual_norm, 0 at a zero residual)."""
    if mode == "constant":
        return zeta_prime
    xhat0 = tweedie_mean(gmm, x_t, sigma_t=sigma_t)
    norm = np.linalg.norm(measurement.residual(xhat0), axis=-1)
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm > 0, zeta_prime / safe, 0.0)


def _dps_w(
    gmm: GaussianMixture,
    x_t: FloatArray,
    measurement: Measurement,
    sigma_t: float,
    mask: FloatArray | None,
    enhanced: bool,
) -> tuple[FloatArray, NDArray[np.bool_], FloatArray]:
    """Weight, degenerate flags and the unit-step reference DPS score."""
    s_ref = dps_score(gmm, x_t, measurement, sigma_t, 1.0)
    # A mask reference observes only its unmasked coordinates; y is ignored elsewhere.
    s_exact = likelihood_score(gmm, x_t, measurement, sigma_t)
    ref, exact = (s_ref, s_exact) if mask is None else (s_ref * mask, s_exact * mask)
    norm_sq = np.sum(ref * ref, axis=-1)
    degenerate = norm_sq == 0
    w = np.sum(exact * ref, axis=-1) / np.where(degenerate, 1.0, norm_sq)
    w = np.where(degenerate, 0.0, w)
    if enhanced:
        if mask is None:
            raise ValueError("enhanced step size needs a mask")
        w = w * np.sqrt(mask.size / mask.sum())
    return w, degenerate, s_ref


def dps_w_weight(
    gmm: GaussianMixture,
    x_t: ArrayLike,
    reference_measurement: Measurement,
    sigma_t: float,
    mask: ArrayLike | None = None,
    enhanced: bool = False,
) -> DpsWeight:
    """Least-squares step size fitting zeta=1 DPS to the exact denoising likelihood score.

    With a mask, both scores are projected onto the observed coordinates before the fit.
    """
    _check_sigma_t(sigma_t)
    op = reference_measurement.op
    if op.kind == "diagonal":
        raise ValueError("reference measurement must use an identity or mask operator")
    if mask is None and op.kind == "mask":
        mask = op.diag
    mask_arr = None if mask is None else np.asarray(mask, dtype=np.float64)
    if mask_arr is not None and not mask_arr.any():
        raise ValueError("mask must observe at least one coordinate")
    w, degenerate, _ = _dps_w(
        gmm, np.asarray(x_t, dtype=np.float64), reference_measurement, sigma_t, mask_arr, enhanced
    )
    if w.ndim == 0:
        return DpsWeight(w=float(w), degenerate=bool(degenerate))
    return DpsWeight(w=w, degenerate=degenerate)


def _mask_of(op: LinearOperator) -> FloatArray | None:
    return op.diag if op.kind == "mask" else None


def guidance_step(
    gmm: GaussianMixture, x_t: FloatArray, spec: GuidanceSpec, sigma_t: float
) -> tuple[FloatArray, FloatArray, NDArray[np.bool_]]:
    """DPS / DPS-w likelihood-score estimate at VE level sigma_t, added to the prior score.

    Returns (correction, w_t, degenerate); w_t is NaN for plain DPS.
    """
    measurement = spec.measurement
    assert measurement is not None
    batch_shape = x_t.shape[:-1]
    if spec.method == "dps":
        zeta = dps_step_size(gmm, x_t, measurement, sigma_t, spec.zeta_prime, spec.zeta_mode)
        correction = dps_score(gmm, x_t, measurement, sigma_t, zeta)
        return correction, np.full(batch_shape, np.nan), np.zeros(batch_shape, dtype=bool)
    if spec.method == "dpsw":
        w, degenerate, s_ref = _dps_w(
            gmm, x_t, measurement, sigma_t, _mask_of(measurement.op), spec.enhanced
        )
        return w[..., None] * s_ref, w, degenerate
    raise ValueError(f"guidance_step does not apply to method {spec.method!r}")


def exact_posterior_score_vp(
    gmm: GaussianMixture,
    x_t: ArrayLike,
    measurement: Measurement,
    alphabar_t: float,
    parity_schedule: NoiseSchedule | None = None,
) -> GuidanceOutput:
    """Posterior score in VP coordinates.

    Exact by default (VE evaluation at x / sqrt(ab), sigma^2 = (1 - ab) / ab, divided by sqrt(ab)).
    With `parity_schedule`, the prior term uses the discrete VP level tau of that schedule with
    1 - ab_tau closest to ab_t * sigma_tilde^2, as a DDPM model would (identity operator only).
    """
    if not 0.0 < alphabar_t < 1.0:
        raise ValueError(f"alphabar_t must lie in (0, 1), got {alphabar_t}")
    x_t = np.asarray(x_t, dtype=np.float64)
    root = np.sqrt(alphabar_t)
    sigma_ve = float(np.sqrt((1.0 - alphabar_t) / alphabar_t))
    if parity_schedule is None:
        out = posterior_score(gmm, x_t / root, measurement, sigma_ve)
        return _output(out.prior_term / root, out.guidance_term / root)
    if measurement.op.kind != "identity" or measurement.sigma_y <= 0:
        raise ValueError("parity evaluation supports denoising (identity, sigma_y > 0) only")
    tp = tilde_params(measurement.y, x_t / root, measurement.sigma_y, sigma_ve)
    tau = nearest_step(parity_schedule, 1.0 - alphabar_t * tp.sigma_tilde_sq)
    alphabar_tau = parity_schedule.alphabar(tau)
    coef = alphabar_t / (1.0 - alphabar_t) * tp.sigma_tilde_sq
    prior = coef * score_vp(gmm, root * tp.x_tilde, alphabar_tau)
    guidance = -(x_t - root * measurement.y) / (alphabar_t * tp.guidance_var)
    return _output(prior, guidance)


def dps_score_vp(
    gmm: GaussianMixture,
    x_t: ArrayLike,
    measurement: Measurement,
    alphabar_t: float,
    zeta_t: ArrayLike,
) -> FloatArray:
    """DPS score in VP coordinates; xhat0 is unchanged by the coordinate map, J picks up 1/sqrt(ab)."""
    if not 0.0 < alphabar_t < 1.0:
        raise ValueError(f"alphabar_t must lie in (0, 1), got {alphabar_t}")
    root = np.sqrt(alphabar_t)
    sigma_ve = float(np.sqrt((1.0 - alphabar_t) / alphabar_t))
    return dps_score(gmm, np.asarray(x_t, dtype=np.float64) / root, measurement, sigma_ve, zeta_t) / root
