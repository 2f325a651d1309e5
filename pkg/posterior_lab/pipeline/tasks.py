"""Task runners: build objects from an ExperimentConfig, run, and write outputs."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from posterior_lab import store
from posterior_lab.config import get_settings
from posterior_lab.errors import ConfigError
from posterior_lab.gmm import GaussianMixture, sample_prior
from posterior_lab.guidance import GuidanceSpec
from posterior_lab.logging_utils import configure_logging
from posterior_lab.models.experiment import ExperimentConfig
from posterior_lab.operators import LinearOperator, Measurement, forward_model
from posterior_lab.pipeline.diagnostics import (
    posterior_necessary_conditions,
    term_ratio_curve,
    term_ratio_summary,
    wt_curve,
    wt_shape_summary,
)
from posterior_lab.pipeline.umbrella import compare_methods, window_summary
from posterior_lab.sampler import sample_batch
from posterior_lab.schedule import NoiseSchedule, build_schedule

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    task: str
    output_dir: Path
    files: list[str] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)


def resolve_output_dir(config: ExperimentConfig) -> Path:
    if config.output_dir is not None:
        return config.output_dir
    return get_settings().output_path / config.task


def build_measurement(config: ExperimentConfig, gmm: GaussianMixture) -> Measurement:
    """Fixed y from the config, or y = A x0 + noise for a prior draw x0."""
    spec = config.measurement
    op = spec.operator.to_operator(gmm.dim)
    if spec.y is not None:
        return Measurement(y=np.asarray(spec.y, dtype=np.float64), op=op, sigma_y=spec.sigma_y)
    seed = spec.synthesize_seed if spec.synthesize_seed is not None else config.master_seed
    x0 = sample_prior(gmm, (seed, 0), 1)[0]
    logger.info("Synthesized measurement from x0=%s (seed %d)", np.round(x0, 4).tolist(), seed)
    return forward_model(x0, op, spec.sigma_y, (seed, 1))


def build_guidance(config: ExperimentConfig, measurement: Measurement | None) -> GuidanceSpec:
    g = config.guidance
    if g.method == "none":
        return GuidanceSpec(method="none")
    try:
        return GuidanceSpec(
            method=g.method,
            measurement=measurement,
            zeta_prime=g.zeta_prime,
            zeta_mode=g.zeta_mode,
            enhanced=g.enhanced,
            parity_tau=g.parity_tau,
        )
    except ValueError as e:
        raise ConfigError(str(e), field="guidance") from e


def _schedule(config: ExperimentConfig) -> NoiseSchedule:
    assert config.schedule is not None
    return build_schedule(config.schedule)


def run_sample(config: ExperimentConfig, out_dir: Path) -> RunResult:
    configure_logging()
    gmm = config.prior.to_mixture()
    schedule = _schedule(config)
    measurement = build_measurement(config, gmm) if config.guidance.method != "none" else None
    guidance = build_guidance(config, measurement)
    logger.info(
        "Sampling %d trajectories (%s, %s, %d steps)",
        config.trajectories, guidance.method, schedule.kind, schedule.n_steps,
    )
    batch = sample_batch(
        gmm, schedule, guidance, config.trajectories, config.master_seed,
        record_steps=config.record_steps, jobs=config.jobs,
    )
    result = RunResult("sample", out_dir)
    store.write_csv(store.finals_frame(batch), out_dir / "finals.csv")
    result.files.append("finals.csv")
    if config.record_steps:
        store.write_csv(store.trajectory_frame(batch), out_dir / "trajectories.csv")
        result.files.append("trajectories.csv")
    result.summary = {
        "final_mean": batch.finals.mean(axis=0).tolist(),
        "final_std": batch.finals.std(axis=0, ddof=1).tolist() if config.trajectories > 1 else None,
    }
    if measurement is not None:
        result.summary["y"] = measurement.y.tolist()
    return result


def run_umbrella_task(config: ExperimentConfig, out_dir: Path) -> RunResult:
    configure_logging()
    gmm = config.prior.to_mixture()
    schedule = _schedule(config)
    uc = config.umbrella
    bin_edges = uc.bin_edges()
    comparison = compare_methods(
        gmm,
        uc.methods,
        {m: uc.window_centers(m) for m in uc.methods},
        uc.sigma_y,
        uc.samples_per_window,
        bin_edges,
        schedule,
        config.master_seed,
        axis=uc.axis,
        min_count=uc.min_count,
        zeta_prime=config.guidance.zeta_prime,
        zeta_mode=config.guidance.zeta_mode,
        enhanced=config.guidance.enhanced,
        jobs=config.jobs,
    )
    truth = comparison.truth
    profiles, windows, plot = [], [], [
        pd.DataFrame({"method": "truth", "x": truth.bin_centers, "f": truth.f})
    ]
    for method, res in comparison.results.items():
        table = window_summary(res.samples)
        table.insert(0, "method", method)
        windows.append(table)
        if res.profile is not None:
            profiles.append(store.profile_frame(method, res.profile, truth))
            plot.append(pd.DataFrame({"method": method, "x": truth.bin_centers, "f": res.profile.f}))

    result = RunResult("umbrella", out_dir)
    if profiles:
        store.write_csv(pd.concat(profiles, ignore_index=True), out_dir / "profile.csv")
        result.files.append("profile.csv")
    store.write_csv(pd.concat(windows, ignore_index=True), out_dir / "windows.csv")
    store.write_csv(pd.concat(plot, ignore_index=True), out_dir / "plot_data.csv")
    store.write_csv(comparison.rmse_table(), out_dir / "rmse.csv")
    result.files += ["windows.csv", "plot_data.csv", "rmse.csv"]
    result.summary = {m: r.rmse for m, r in comparison.results.items()}
    return result


def run_diagnose(config: ExperimentConfig, out_dir: Path) -> RunResult:
    configure_logging()
    gmm = config.prior.to_mixture()
    schedule = _schedule(config)
    dc = config.diagnose
    diag = posterior_necessary_conditions(
        gmm,
        schedule,
        config.measurement.sigma_y,
        dc.n_conditions,
        dc.n_samples,
        config.master_seed,
        method=config.guidance.method,
        jobs=config.jobs,
    )
    result = RunResult("diagnose", out_dir, summary=diag.to_row())
    store.write_csv(pd.DataFrame([diag.to_row()]), out_dir / "diagnostics.csv")
    result.files.append("diagnostics.csv")
    print(format_table(diag.to_row()))
    return result


def run_curves(config: ExperimentConfig, out_dir: Path) -> RunResult:
    configure_logging()
    gmm = config.prior.to_mixture()
    schedule = _schedule(config)
    y = (
        np.asarray(config.curves.y, dtype=np.float64)
        if config.curves.y is not None
        else build_measurement(config, gmm).y
    )
    wt_frames, shapes = [], []
    for sigma_y in config.curves.sigma_y_list:
        measurement = Measurement(y=y, op=LinearOperator.identity(gmm.dim), sigma_y=sigma_y)
        curve = wt_curve(gmm, measurement, schedule, config.master_seed)
        curve.insert(0, "sigma_y", sigma_y)
        wt_frames.append(curve)
        for series in ("w_t", "zeta_equiv"):
            shape = wt_shape_summary(curve[series].to_numpy())
            shapes.append({"sigma_y": sigma_y, "series": series, **shape})
    ratio = term_ratio_curve(gmm, y, config.curves.sigma_y_list, schedule, config.master_seed)

    result = RunResult("curves", out_dir)
    store.write_csv(pd.concat(wt_frames, ignore_index=True), out_dir / "wt_curve.csv")
    store.write_csv(pd.DataFrame(shapes), out_dir / "wt_summary.csv")
    store.write_csv(ratio, out_dir / "term_ratio.csv")
    store.write_csv(term_ratio_summary(ratio), out_dir / "term_ratio_summary.csv")
    result.files += ["wt_curve.csv", "wt_summary.csv", "term_ratio.csv", "term_ratio_summary.csv"]
    result.summary = {"y": y.tolist(), "wt_shape": shapes}
    return result


_RUNNERS = {
    "sample": run_sample,
    "umbrella": run_umbrella_task,
    "diagnose": run_diagnose,
    "curves": run_curves,
}


def run_task(config: ExperimentConfig) -> RunResult:
    """Run config.task and write its outputs plus manifest.json."""
    configure_logging()
    out_dir = store.ensure_dir(resolve_output_dir(config))
    start = time.perf_counter()
    result = _RUNNERS[config.task](config, out_dir)
    elapsed = time.perf_counter() - start
    store.write_manifest(
        out_dir,
        task=config.task,
        config=config.model_dump(mode="json"),
        seed=config.master_seed,
        wall_time_s=elapsed,
        files=result.files,
        summary=result.summary,
    )
    result.files.append("manifest.json")
    logger.info("Task %s finished in %.1fs; outputs in %s", config.task, elapsed, out_dir)
    return result


def format_table(row: dict[str, Any]) -> str:
    """Fixed-field two-column summary."""
    lines = []
    for key, value in row.items():
        text = f"{value:.6g}" if isinstance(value, float) else str(value)
        lines.append(f"{key:<26}{text:>14}")
    return "\n".join(lines)
