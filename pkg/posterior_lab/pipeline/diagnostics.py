"""Necessary-condition checks for posterior samplers, and w_t / term-ratio curves."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from scipy.special import kolmogorov
from scipy.stats import norm, pearsonr

from posterior_lab.gmm import GaussianMixture, sample_prior
from posterior_lab.guidance import (
    GuidanceMethod,
    GuidanceSpec,
    exact_denoising_score,
    exact_posterior_score_vp,
    tweedie_mean,
)
from posterior_lab.operators import LinearOperator, Measurement, forward_model
from posterior_lab.sampler import Seed, Trajectory, ancestral_sample, sample_batch, seed_key, ve_sample
from posterior_lab.schedule import NoiseSchedule

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class PosteriorDiagnostics:
    mse_mmse_ratio: float
    mse: float
    mmse: float
    residual_std: float
    ks_statistic: float
    ks_pvalue: float
    pearson_r: float
    n_conditions: int
    n_samples_per_condition: int
    sigma_y: float

    def to_row(self) -> dict[str, Any]:
        return asdict(self)


def ks_normal_test(values: ArrayLike, sigma: float) -> tuple[float, float]:
    """One-sample KS test against N(0, sigma^2): (D, asymptotic p-value)."""
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = x.size
    if n < 1:
        raise ValueError("KS test needs at least one value")
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    cdf = norm.cdf(x / sigma)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    return d, float(kolmogorov(np.sqrt(n) * d))


def _sample_trajectory(
    gmm: GaussianMixture, schedule: NoiseSchedule, guidance: GuidanceSpec, rng_seed: Seed
) -> Trajectory:
    if schedule.kind == "vp":
        return ancestral_sample(gmm, schedule, guidance, rng_seed)
    return ve_sample(gmm, schedule, guidance, rng_seed)


def posterior_necessary_conditions(
    gmm: GaussianMixture,
    schedule: NoiseSchedule,
    sigma_y: float,
    n_conditions: int,
    n_samples: int,
    rng_seed: Seed,
    *,
    method: GuidanceMethod = "exact",
    jobs: int | None = None,
) -> PosteriorDiagnostics:
    """Denoising conditions: x0 ~ prior, y = x0 + sigma_y eta, n_samples posterior draws each.

    MSE uses the first draw, the MMSE estimate the mean of the rest. Residuals y - x pool all
    draws for std and Pearson r; the KS test uses the first draw of each condition so that its
    values are independent.
    """
    if n_samples < 2:
        raise ValueError(f"n_samples must be >= 2, got {n_samples}")
    if n_conditions < 1:
        raise ValueError(f"n_conditions must be >= 1, got {n_conditions}")
    if not sigma_y > 0:
        raise ValueError(f"sigma_y must be > 0, got {sigma_y}")
    key = seed_key(rng_seed)
    x0 = sample_prior(gmm, (*key, 0), n_conditions)
    y = forward_model(x0, LinearOperator.identity(gmm.dim), sigma_y, (*key, 1)).y
    measurement = Measurement(y=np.repeat(y, n_samples, axis=0), op=LinearOperator.identity(gmm.dim), sigma_y=sigma_y)
    guidance = GuidanceSpec(method=method, measurement=measurement)
    logger.info(
        "Diagnostics: %d conditions x %d samples (method=%s, sigma_y=%g)",
        n_conditions, n_samples, method, sigma_y,
    )
    batch = sample_batch(gmm, schedule, guidance, n_conditions * n_samples, (*key, 2), jobs=jobs)
    samples = batch.finals.reshape(n_conditions, n_samples, gmm.dim)

    mse = float(np.mean(np.sum((samples[:, 0] - x0) ** 2, axis=-1)))
    mmse = float(np.mean(np.sum((samples[:, 1:].mean(axis=1) - x0) ** 2, axis=-1)))
    residuals = y[:, None, :] - samples
    ks_d, ks_p = ks_normal_test(residuals[:, 0, :], sigma_y)
    r = pearsonr(residuals.ravel(), samples.ravel())
    diag = PosteriorDiagnostics(
        mse_mmse_ratio=mse / mmse,
        mse=mse,
        mmse=mmse,
        residual_std=float(np.std(residuals, ddof=1)),
        ks_statistic=ks_d,
        ks_pvalue=ks_p,
        pearson_r=float(r.statistic),
        n_conditions=n_conditions,
        n_samples_per_condition=n_samples,
        sigma_y=sigma_y,
    )
    logger.info(
        "Diagnostics: ratio=%.3f residual_std=%.4f ks_p=%.3f r=%.4f",
        diag.mse_mmse_ratio, diag.residual_std, diag.ks_pvalue, diag.pearson_r,
    )
    return diag


def wt_curve(
    gmm: GaussianMixture,
    measurement: Measurement,
    schedule: NoiseSchedule,
    rng_seed: Seed,
    *,
    enhanced: bool = False,
) -> pd.DataFrame:
    """w_t along one DPS-w trajectory (steps N-1 .. 0).

    Columns t, w_t, residual_norm, zeta_equiv, degenerate. `residual_norm` is ||y - A xhat0|| at
    the state each step starts from, and `zeta_equiv` = w_t * residual_norm is the zeta' that
    the residual-normalized DPS step size would need to take the same step.
    """
    guidance = GuidanceSpec(method="dpsw", measurement=measurement, enhanced=enhanced)
    traj = _sample_trajectory(gmm, schedule, guidance, rng_seed)
    states = np.vstack([traj.initial[None, :], traj.x[:-1]])
    sigmas = schedule.ve_sigmas
    roots = np.sqrt(schedule.alphabars) if schedule.alphabars is not None else np.ones_like(sigmas)
    residual_norm = np.empty(traj.t.size)
    for k, (t, x) in enumerate(zip(traj.t, states)):
        xhat0 = tweedie_mean(gmm, x / roots[t], sigma_t=float(sigmas[t]))
        residual_norm[k] = np.linalg.norm(measurement.residual(xhat0))
    return pd.DataFrame(
        {
            "t": traj.t,
            "w_t": traj.w_t,
            "residual_norm": residual_norm,
            "zeta_equiv": traj.w_t * residual_norm,
            "degenerate": traj.degenerate,
        }
    )


def wt_shape_summary(w_t: ArrayLike) -> dict[str, float | bool | int]:
    """Shape statistics of a weight series in execution order (high noise first).

    `interior_peak` means the maximum sits strictly between the first and last step.
    """
    w = np.asarray(w_t, dtype=np.float64)
    half = w.size // 2
    tail = w[-max(2, w.size // 4) :]
    peak = int(np.argmax(w))
    return {
        "first_half_mean": float(np.mean(w[:half])),
        "second_half_mean": float(np.mean(w[half:])),
        "last_quarter_nondecreasing_fraction": float(np.mean(np.diff(tail) >= 0)),
        "peak_index": peak,
        "interior_peak": bool(0 < peak < w.size - 1),
    }


def term_ratio_curve(
    gmm: GaussianMixture,
    y: ArrayLike,
    sigma_y_list: list[float],
    schedule: NoiseSchedule,
    rng_seed: Seed = 0,
) -> pd.DataFrame:
    """log10(|guidance term| / |prior term|) of the exact denoising score along one
    unconditional trajectory. Columns sigma_y, t, log10_ratio.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (gmm.dim,):
        raise ValueError(f"y must have length {gmm.dim}")
    traj = _sample_trajectory(gmm, schedule, GuidanceSpec(method="none"), rng_seed)
    states = np.vstack([traj.initial[None, :], traj.x[:-1]])
    rows: list[dict[str, float | int]] = []
    for sigma_y in sigma_y_list:
        measurement = Measurement(y=y, op=LinearOperator.identity(gmm.dim), sigma_y=sigma_y)
        for t, x in zip(traj.t, states):
            if schedule.kind == "vp":
                out = exact_posterior_score_vp(gmm, x, measurement, schedule.alphabar(int(t) + 1))
            else:
                out = exact_denoising_score(gmm, x, y, sigma_y, schedule.sigma(int(t) + 1))
            ratio = np.linalg.norm(out.guidance_term) / np.linalg.norm(out.prior_term)
            rows.append({"sigma_y": sigma_y, "t": int(t), "log10_ratio": float(np.log10(ratio))})
    return pd.DataFrame(rows)


def term_ratio_summary(curve: pd.DataFrame) -> pd.DataFrame:
    """Per sigma_y: fraction of steps with guidance dominant, and the last dominant step."""
    rows = []
    for sigma_y, group in curve.groupby("sigma_y", sort=False):
        dominant = group["log10_ratio"] > 0
        rows.append(
            {
                "sigma_y": sigma_y,
                "dominant_fraction": float(dominant.mean()),
                "min_dominant_t": int(group.loc[dominant, "t"].min()) if dominant.any() else -1,
            }
        )
    return pd.DataFrame(rows)
