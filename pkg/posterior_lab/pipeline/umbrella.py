"""Umbrella sampling as noisy inpainting, WHAM unbiasing and ground-truth comparison.

A window centered at c_k observes coordinate `axis` with y = c_k and noise sigma_y, which is
a harmonic bias B_k(x) = (x - c_k)^2 / (2 sigma_y^2) in units of kT = 1.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import logsumexp

from posterior_lab.config import get_settings
from posterior_lab.errors import WhamError
from posterior_lab.gmm import GaussianMixture, NoiseCov, log_density_perturbed
from posterior_lab.guidance import GuidanceMethod, GuidanceSpec, ZetaMode
from posterior_lab.logging_utils import log_context
from posterior_lab.operators import LinearOperator, Measurement
from posterior_lab.sampler import Seed, sample_batch, seed_key
from posterior_lab.schedule import NoiseSchedule

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class WindowSet:
    centers: FloatArray
    sigma_y: float
    samples_per_window: int
    axis: int = 0

    def __post_init__(self) -> None:
        centers = np.asarray(self.centers, dtype=np.float64)
        if centers.ndim != 1 or centers.size == 0:
            raise ValueError("centers must be a non-empty vector")
        if np.any(np.diff(centers) <= 0):
            raise ValueError("centers must be strictly increasing")
        if not self.sigma_y > 0:
            raise ValueError(f"sigma_y must be > 0, got {self.sigma_y}")
        if self.samples_per_window < 1:
            raise ValueError("samples_per_window must be >= 1")
        object.__setattr__(self, "centers", centers)

    @property
    def n_windows(self) -> int:
        return int(self.centers.size)

    def bias(self, x: ArrayLike) -> FloatArray:
        """B_k(x), shape (n_windows, len(x))."""
        x = np.asarray(x, dtype=np.float64)
        return (x[None, :] - self.centers[:, None]) ** 2 / (2.0 * self.sigma_y**2)


@dataclass(frozen=True, eq=False)
class FreeEnergyProfile:
    """-log density per bin, min-shifted to 0 over covered bins; NaN where uncovered."""

    bin_edges: FloatArray
    f: FloatArray
    coverage: NDArray[np.int64] | None = None
    window_f: FloatArray | None = None
    iterations: int = 0

    @property
    def bin_centers(self) -> FloatArray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def covered(self) -> NDArray[np.bool_]:
        return np.isfinite(self.f)


@dataclass(frozen=True, eq=False)
class WindowSamples:
    center: float
    values: FloatArray
    points: FloatArray = field(repr=False)


def _check_edges(bin_edges: ArrayLike) -> FloatArray:
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be a strictly increasing vector of length >= 2")
    return edges


def ground_truth_profile(gmm: GaussianMixture, axis: int, bin_edges: ArrayLike) -> FreeEnergyProfile:
    """-log of the exact marginal along `axis` at bin centers, min-shifted."""
    edges = _check_edges(bin_edges)
    marginal = gmm.marginal(axis)
    centers = 0.5 * (edges[:-1] + edges[1:])
    f = -np.asarray(log_density_perturbed(marginal, centers[:, None], NoiseCov.isotropic(0.0)))
    return FreeEnergyProfile(bin_edges=edges, f=f - f.min())


def window_measurement(gmm: GaussianMixture, center: float, sigma_y: float, axis: int) -> Measurement:
    """Inpainting measurement observing only `axis`, at `center`."""
    mask = np.zeros(gmm.dim)
    mask[axis] = 1.0
    y = np.zeros(gmm.dim)
    y[axis] = center
    return Measurement(y=y, op=LinearOperator.mask(mask), sigma_y=sigma_y)


def run_umbrella(
    gmm: GaussianMixture,
    windows: WindowSet,
    guidance_method: GuidanceMethod,
    schedule: NoiseSchedule,
    rng_seed: Seed,
    *,
    zeta_prime: float = 1.0,
    zeta_mode: ZetaMode = "constant",
    enhanced: bool = False,
    jobs: int | None = None,
) -> list[WindowSamples]:
    """Guided samples for every window; window k uses seed key `[*rng_seed, k]`."""
    if not 0 <= windows.axis < gmm.dim:
        raise ValueError(f"axis {windows.axis} out of range for dim {gmm.dim}")
    settings = get_settings()
    jobs = jobs if jobs is not None else settings.jobs
    key = seed_key(rng_seed)

    def run_window(k: int) -> WindowSamples:
        center = float(windows.centers[k])
        spec = GuidanceSpec(
            method=guidance_method,
            measurement=window_measurement(gmm, center, windows.sigma_y, windows.axis),
            zeta_prime=zeta_prime,
            zeta_mode=zeta_mode,
            enhanced=enhanced,
        )
        batch = sample_batch(
            gmm, schedule, spec, windows.samples_per_window, (*key, k), jobs=1
        )
        return WindowSamples(center=center, values=batch.finals[:, windows.axis], points=batch.finals)

    n = windows.n_windows
    results: dict[int, WindowSamples] = {}
    progress_every = max(1, n // 10)
    if jobs <= 1:
        for k in range(n):
            results[k] = run_window(k)
            if (k + 1) % progress_every == 0 or k + 1 == n:
                logger.info("Umbrella (%s): %d / %d windows", guidance_method, k + 1, n)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            futures = {executor.submit(run_window, k): k for k in range(n)}
            for done, future in enumerate(as_completed(futures), start=1):
                results[futures[future]] = future.result()
                if done % progress_every == 0 or done == n:
                    logger.info("Umbrella (%s): %d / %d windows", guidance_method, done, n)
    return [results[k] for k in range(n)]


def _window_groups(counts: NDArray[np.int64]) -> list[list[int]]:
    """Windows grouped by shared occupied bins."""
    occupied = csr_matrix((counts > 0).astype(np.int64))
    overlap = occupied @ occupied.T
    n_groups, labels = connected_components(overlap, directed=False)
    return [np.flatnonzero(labels == g).tolist() for g in range(n_groups)]


def wham_window_energies(log_p: FloatArray, bias: FloatArray) -> FloatArray:
    """f_k = -log sum_b P_b exp(-B_kb), gauge-fixed to f_0 = 0."""
    f = -logsumexp(log_p[None, :] - bias, axis=1)
    return f - f[0]


def wham(
    per_window_samples: Sequence[ArrayLike],
    windows: WindowSet,
    bin_edges: ArrayLike,
    tol: float | None = None,
    max_iter: int | None = None,
    f_init: ArrayLike | None = None,
) -> FreeEnergyProfile:
    """Self-consistent WHAM in log space at kT = 1.

    Only samples inside the binned range count toward N_k. Raises WhamError when the windows
    do not overlap into one connected group or the iteration does not converge.
    """
    settings = get_settings()
    tol = tol if tol is not None else settings.wham_tol
    max_iter = max_iter if max_iter is not None else settings.wham_max_iter
    edges = _check_edges(bin_edges)
    if len(per_window_samples) != windows.n_windows:
        raise ValueError(
            f"got samples for {len(per_window_samples)} windows, expected {windows.n_windows}"
        )
    counts = np.stack(
        [np.histogram(np.asarray(s, dtype=np.float64), bins=edges)[0] for s in per_window_samples]
    ).astype(np.int64)

    groups = _window_groups(counts)
    if len(groups) > 1:
        raise WhamError(
            f"windows split into {len(groups)} disconnected groups: {groups}", groups=groups
        )

    centers = 0.5 * (edges[:-1] + edges[1:])
    widths = np.diff(edges)
    bias = windows.bias(centers)
    total = counts.sum(axis=0)
    n_k = counts.sum(axis=1)
    covered = total > 0
    with np.errstate(divide="ignore"):
        log_total = np.log(total.astype(np.float64))
        log_n = np.log(n_k.astype(np.float64))

    f = np.zeros(windows.n_windows) if f_init is None else np.asarray(f_init, dtype=np.float64).copy()
    f = f - f[0]
    residual = np.inf
    log_p = np.full(centers.size, -np.inf)
    for iteration in range(1, max_iter + 1):
        denom = logsumexp(log_n[:, None] + f[:, None] - bias, axis=0)
        log_p = np.where(covered, log_total - denom, -np.inf)
        log_p = log_p - logsumexp(log_p)
        f_new = wham_window_energies(log_p, bias)
        residual = float(np.max(np.abs(f_new - f)))
        f = f_new
        if residual < tol:
            break
    else:
        raise WhamError(
            f"WHAM did not converge in {max_iter} iterations (residual {residual:.3e})",
            residual=residual,
            step=max_iter,
        )
    logger.debug("WHAM converged in %d iterations (residual %.2e)", iteration, residual)

    with np.errstate(divide="ignore"):
        free = -(log_p - np.log(widths))
    free = np.where(covered, free, np.nan)
    free = free - np.nanmin(free)
    return FreeEnergyProfile(
        bin_edges=edges, f=free, coverage=total, window_f=f, iterations=iteration
    )


def profile_rmse(estimate: FreeEnergyProfile, truth: FreeEnergyProfile, min_count: int) -> float:
    """RMSE over bins with >= min_count samples; both profiles are min-shifted over those bins."""
    if estimate.coverage is None:
        raise ValueError("estimate has no coverage counts")
    if not np.array_equal(estimate.bin_edges, truth.bin_edges):
        raise ValueError("profiles use different bins")
    use = (estimate.coverage >= min_count) & estimate.covered & truth.covered
    if not use.any():
        raise ValueError(f"no bins with >= {min_count} samples")
    est, ref = estimate.f[use], truth.f[use]
    diff = (est - est.min()) - (ref - ref.min())
    return float(np.sqrt(np.mean(diff**2)))


def window_summary(samples: Sequence[WindowSamples]) -> pd.DataFrame:
    """Per-window center, mean, std (ddof=1) and sample count."""
    return pd.DataFrame(
        {
            "center": [s.center for s in samples],
            "mean": [float(np.mean(s.values)) for s in samples],
            "std": [float(np.std(s.values, ddof=1)) if s.values.size > 1 else float("nan") for s in samples],
            "n": [int(s.values.size) for s in samples],
        }
    )


@dataclass
class MethodResult:
    method: str
    windows: WindowSet
    samples: list[WindowSamples]
    profile: FreeEnergyProfile | None
    rmse: float
    error: str | None = None


@dataclass
class UmbrellaComparison:
    truth: FreeEnergyProfile
    results: dict[str, MethodResult]

    def rmse_table(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "method": list(self.results),
                "n_windows": [r.windows.n_windows for r in self.results.values()],
                "rmse": [r.rmse for r in self.results.values()],
                "error": [r.error or "" for r in self.results.values()],
            }
        )


def compare_methods(
    gmm: GaussianMixture,
    methods: Sequence[GuidanceMethod],
    centers_for: dict[str, Sequence[float]],
    sigma_y: float,
    samples_per_window: int,
    bin_edges: ArrayLike,
    schedule: NoiseSchedule,
    rng_seed: Seed,
    *,
    axis: int = 0,
    min_count: int = 50,
    zeta_prime: float = 1.0,
    zeta_mode: ZetaMode = "constant",
    enhanced: bool = False,
    jobs: int | None = None,
) -> UmbrellaComparison:
    """Umbrella + WHAM per method against the analytic profile.

    A method whose WHAM step fails is logged and recorded with rmse = inf. `enhanced` applies
    to dpsw only.
    """
    truth = ground_truth_profile(gmm, axis, bin_edges)
    results: dict[str, MethodResult] = {}
    for method in methods:
        windows = WindowSet(
            centers=np.asarray(centers_for[method], dtype=np.float64),
            sigma_y=sigma_y,
            samples_per_window=samples_per_window,
            axis=axis,
        )
        samples = run_umbrella(
            gmm, windows, method, schedule, rng_seed,
            zeta_prime=zeta_prime, zeta_mode=zeta_mode,
            enhanced=enhanced and method == "dpsw", jobs=jobs,
        )
        try:
            profile = wham([s.values for s in samples], windows, bin_edges)
            rmse = profile_rmse(profile, truth, min_count)
            results[method] = MethodResult(method, windows, samples, profile, rmse)
            logger.info("Umbrella %s: RMSE %.4f over bins with >= %d samples", method, rmse, min_count)
        except (WhamError, ValueError) as e:
            logger.warning(
                "Umbrella %s: WHAM failed: %s", method, e, extra=log_context(module="umbrella", kind="wham")
            )
            results[method] = MethodResult(method, windows, samples, None, float("inf"), str(e))
    return UmbrellaComparison(truth=truth, results=results)
