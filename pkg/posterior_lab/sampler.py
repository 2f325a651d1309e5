"""Reverse-diffusion samplers with pluggable guidance.

VP runs follow the DDPM ancestral update (x0 estimate via Tweedie, posterior-mean step with the
fixed small variance). VE runs use the ancestral Euler-Maruyama step. The exact method swaps the
posterior score in for the prior score; DPS and DPS-w add their likelihood-score estimate to the
prior score, so both go through the same step coefficient.

Each trajectory owns one RNG stream seeded by `[*seed_key, index]`, and all of its noise is
drawn up front, so a trajectory's result does not depend on chunking or worker count.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from posterior_lab.config import get_settings
from posterior_lab.errors import NumericalError
from posterior_lab.gmm import GaussianMixture, NoiseCov, score_perturbed, score_vp
from posterior_lab.guidance import (
    GuidanceSpec,
    exact_posterior_score_vp,
    guidance_step,
    posterior_score,
)
from posterior_lab.logging_utils import log_context
from posterior_lab.schedule import NoiseSchedule

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
Seed = int | Sequence[int]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One recorded run. Row k of the step arrays is step index t[k], from N-1 down to 0."""

    seed: tuple[int, ...]
    initial: FloatArray
    t: NDArray[np.int64]
    x: FloatArray
    w_t: FloatArray
    guidance_norm: FloatArray
    prior_norm: FloatArray
    degenerate: NDArray[np.bool_]

    @property
    def final(self) -> FloatArray:
        return self.x[-1]


@dataclass(frozen=True, eq=False)
class BatchResult:
    """Finals for n trajectories; step arrays (N, n, ...) only when recorded."""

    seeds: list[tuple[int, ...]]
    initial: FloatArray
    finals: FloatArray
    t: NDArray[np.int64]
    x: FloatArray | None = None
    w_t: FloatArray | None = None
    guidance_norm: FloatArray | None = None
    prior_norm: FloatArray | None = None
    degenerate: NDArray[np.bool_] | None = None

    @property
    def n_trajectories(self) -> int:
        return int(self.finals.shape[0])

    @property
    def recorded(self) -> bool:
        return self.x is not None

    def trajectory(self, idx: int) -> Trajectory:
        if not self.recorded:
            raise ValueError("steps were not recorded for this batch")
        assert self.x is not None and self.w_t is not None and self.degenerate is not None
        assert self.guidance_norm is not None and self.prior_norm is not None
        return Trajectory(
            seed=self.seeds[idx],
            initial=self.initial[idx],
            t=self.t,
            x=self.x[:, idx],
            w_t=self.w_t[:, idx],
            guidance_norm=self.guidance_norm[:, idx],
            prior_norm=self.prior_norm[:, idx],
            degenerate=self.degenerate[:, idx],
        )


def seed_key(seed: Seed) -> tuple[int, ...]:
    """Normalize an int or entropy sequence to a tuple of non-negative ints."""
    key = (int(seed),) if isinstance(seed, (int, np.integer)) else tuple(int(s) for s in seed)
    if any(s < 0 for s in key):
        raise ValueError(f"seeds must be non-negative, got {key}")
    return key


def trajectory_seed(master: Seed, index: int) -> tuple[int, ...]:
    return (*seed_key(master), index)


def _draw_noise(seed: tuple[int, ...], n_steps: int, dim: int) -> FloatArray:
    """Row 0 starts the chain; row k feeds the k-th reverse step."""
    return np.random.default_rng(list(seed)).standard_normal((n_steps + 1, dim))


def _norm(v: FloatArray) -> FloatArray:
    return np.linalg.norm(v, axis=-1)


def _check_finite(x: FloatArray, step: int) -> None:
    if not np.all(np.isfinite(x)):
        bad = int(np.sum(~np.all(np.isfinite(x), axis=-1)))
        logger.warning(
            "Non-finite state in %d trajectories",
            bad,
            extra=log_context(module="sampler", step=step, kind="numerical"),
        )
        raise NumericalError("non-finite sampler state", module="sampler", step=step)


def _vp_step(
    gmm: GaussianMixture,
    schedule: NoiseSchedule,
    spec: GuidanceSpec,
    x: FloatArray,
    i: int,
    z: FloatArray,
) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray, NDArray[np.bool_]]:
    assert schedule.alphabars is not None and schedule.betas is not None
    ab = float(schedule.alphabars[i])
    ab_prev = float(schedule.alphabars[i - 1]) if i > 0 else 1.0
    beta = float(schedule.betas[i])
    root = np.sqrt(ab)
    batch = x.shape[:-1]
    guidance_norm = np.zeros(batch)
    w_t = np.full(batch, np.nan)
    degenerate = np.zeros(batch, dtype=bool)

    if spec.method == "exact":
        assert spec.measurement is not None
        out = exact_posterior_score_vp(
            gmm, x, spec.measurement, ab, parity_schedule=schedule if spec.parity_tau else None
        )
        score = out.posterior_score
        prior_norm = _norm(out.prior_term)
        guidance_norm = _norm(out.guidance_term)
    else:
        score = score_vp(gmm, x, ab)
        prior_norm = _norm(score)
    if spec.method in ("dps", "dpsw"):
        # Evaluated in VE coordinates; the correction joins the score before the x0 estimate.
        sigma_ve = float(np.sqrt((1.0 - ab) / ab))
        correction, w_t, degenerate = guidance_step(gmm, x / root, spec, sigma_ve)
        correction = correction / root
        score = score + correction
        guidance_norm = _norm(correction)

    xhat0 = (x + (1.0 - ab) * score) / root
    mean = (
        np.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab) * x
        + np.sqrt(ab_prev) * beta / (1.0 - ab) * xhat0
    )
    var = (1.0 - ab_prev) / (1.0 - ab) * beta
    x_new = mean + np.sqrt(var) * z
    return x_new, w_t, guidance_norm, prior_norm, degenerate


def _ve_step(
    gmm: GaussianMixture,
    schedule: NoiseSchedule,
    spec: GuidanceSpec,
    x: FloatArray,
    i: int,
    z: FloatArray,
) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray, NDArray[np.bool_]]:
    assert schedule.sigmas is not None
    sigma = float(schedule.sigmas[i])
    var = sigma * sigma
    var_prev = float(schedule.sigmas[i - 1]) ** 2 if i > 0 else 0.0
    batch = x.shape[:-1]
    guidance_norm = np.zeros(batch)
    w_t = np.full(batch, np.nan)
    degenerate = np.zeros(batch, dtype=bool)

    if spec.method == "exact":
        assert spec.measurement is not None
        out = posterior_score(gmm, x, spec.measurement, sigma)
        score = out.posterior_score
        prior_norm = _norm(out.prior_term)
        guidance_norm = _norm(out.guidance_term)
    else:
        score = score_perturbed(gmm, x, NoiseCov.isotropic(var))
        prior_norm = _norm(score)
    if spec.method in ("dps", "dpsw"):
        # Guidance enters as a score correction inside the drift.
        correction, w_t, degenerate = guidance_step(gmm, x, spec, sigma)
        score = score + correction
        guidance_norm = _norm(correction)

    x_new = x + (var - var_prev) * score + np.sqrt(var_prev * (var - var_prev) / var) * z
    return x_new, w_t, guidance_norm, prior_norm, degenerate


def _check_inputs(gmm: GaussianMixture, guidance: GuidanceSpec) -> None:
    if guidance.measurement is not None and guidance.measurement.dim != gmm.dim:
        raise ValueError(
            f"measurement dim {guidance.measurement.dim} does not match prior dim {gmm.dim}"
        )


def _integrate(
    gmm: GaussianMixture,
    schedule: NoiseSchedule,
    guidance: GuidanceSpec,
    noise: FloatArray,
    record: bool,
) -> dict[str, FloatArray]:
    """Run a (B, N+1, d) block of pre-drawn noise through the reverse chain."""
    n_steps = schedule.n_steps
    step = _vp_step if schedule.kind == "vp" else _ve_step
    scale = 1.0 if schedule.kind == "vp" else float(schedule.ve_sigmas[-1])
    x = scale * noise[:, 0, :]
    out: dict[str, FloatArray] = {"initial": x.copy()}
    if record:
        batch = noise.shape[0]
        out["x"] = np.empty((n_steps, batch, gmm.dim))
        out["w_t"] = np.empty((n_steps, batch))
        out["guidance_norm"] = np.empty((n_steps, batch))
        out["prior_norm"] = np.empty((n_steps, batch))
        out["degenerate"] = np.zeros((n_steps, batch), dtype=bool)

    for k, i in enumerate(range(n_steps - 1, -1, -1)):
        x, w_t, g_norm, p_norm, degenerate = step(gmm, schedule, guidance, x, i, noise[:, k + 1, :])
        _check_finite(x, i)
        if record:
            out["x"][k] = x
            out["w_t"][k] = w_t
            out["guidance_norm"][k] = g_norm
            out["prior_norm"][k] = p_norm
            out["degenerate"][k] = degenerate
    out["finals"] = x
    return out


def _run_single(
    gmm: GaussianMixture, schedule: NoiseSchedule, guidance: GuidanceSpec, rng_seed: Seed
) -> Trajectory:
    _check_inputs(gmm, guidance)
    seed = seed_key(rng_seed)
    noise = _draw_noise(seed, schedule.n_steps, gmm.dim)[None]
    out = _integrate(gmm, schedule, guidance, noise, record=True)
    return Trajectory(
        seed=seed,
        initial=out["initial"][0],
        t=np.arange(schedule.n_steps - 1, -1, -1),
        x=out["x"][:, 0],
        w_t=out["w_t"][:, 0],
        guidance_norm=out["guidance_norm"][:, 0],
        prior_norm=out["prior_norm"][:, 0],
        degenerate=out["degenerate"][:, 0],
    )


def ancestral_sample(
    gmm: GaussianMixture, schedule: NoiseSchedule, guidance: GuidanceSpec, rng_seed: Seed
) -> Trajectory:
    """One DDPM ancestral trajectory from x_N ~ N(0, I)."""
    if schedule.kind != "vp":
        raise ValueError("ancestral_sample needs a VP schedule")
    return _run_single(gmm, schedule, guidance, rng_seed)


def ve_sample(
    gmm: GaussianMixture, schedule: NoiseSchedule, guidance: GuidanceSpec, rng_seed: Seed
) -> Trajectory:
    """One VE ancestral trajectory from x_N ~ N(0, sigma_max^2 I)."""
    if schedule.kind != "ve":
        raise ValueError("ve_sample needs a VE schedule")
    return _run_single(gmm, schedule, guidance, rng_seed)


def sample_batch(
    gmm: GaussianMixture,
    schedule: NoiseSchedule,
    guidance: GuidanceSpec,
    n: int,
    master_seed: Seed,
    *,
    record_steps: bool = False,
    jobs: int | None = None,
    chunk_size: int | None = None,
) -> BatchResult:
    """n independent trajectories; trajectory i uses seed `[*master_seed, i]`.

    A batched measurement must carry one y row per trajectory.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    _check_inputs(gmm, guidance)
    settings = get_settings()
    jobs = jobs if jobs is not None else settings.jobs
    chunk_size = chunk_size if chunk_size is not None else settings.batch_chunk_size
    measurement = guidance.measurement
    if measurement is not None and measurement.is_batched and measurement.y.shape[0] != n:
        raise ValueError(f"batched measurement has {measurement.y.shape[0]} rows, expected {n}")

    seeds = [trajectory_seed(master_seed, i) for i in range(n)]
    starts = list(range(0, n, chunk_size))

    def run_chunk(start: int) -> dict[str, FloatArray]:
        rows = np.arange(start, min(start + chunk_size, n))
        spec = guidance
        if measurement is not None and measurement.is_batched:
            spec = replace(guidance, measurement=measurement.take(rows))
        noise = np.stack([_draw_noise(seeds[r], schedule.n_steps, gmm.dim) for r in rows])
        return _integrate(gmm, schedule, spec, noise, record_steps)

    results: dict[int, dict[str, FloatArray]] = {}
    progress_every = max(1, len(starts) // 10)
    if jobs <= 1 or len(starts) == 1:
        for done, start in enumerate(starts, start=1):
            results[start] = run_chunk(start)
            if done % progress_every == 0 or done == len(starts):
                logger.info(
                    "Sampled %d / %d chunks", done, len(starts), extra=log_context(module="sampler")
                )
    else:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            futures = {executor.submit(run_chunk, start): start for start in starts}
            for done, future in enumerate(as_completed(futures), start=1):
                results[futures[future]] = future.result()
                if done % progress_every == 0 or done == len(starts):
                    logger.info(
                        "Sampled %d / %d chunks",
                        done,
                        len(starts),
                        extra=log_context(module="sampler"),
                    )

    ordered = [results[start] for start in starts]
    recorded: dict[str, FloatArray] = {}
    if record_steps:
        for key in ("x", "w_t", "guidance_norm", "prior_norm", "degenerate"):
            recorded[key] = np.concatenate([r[key] for r in ordered], axis=1)
    return BatchResult(
        seeds=seeds,
        initial=np.concatenate([r["initial"] for r in ordered]),
        finals=np.concatenate([r["finals"] for r in ordered]),
        t=np.arange(schedule.n_steps - 1, -1, -1),
        **recorded,
    )
