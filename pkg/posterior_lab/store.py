"""Store: run outputs (CSV via pandas, manifest/error JSON) and config/prior file loading."""

from __future__ import annotations

import json
import logging
import platform
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import ValidationError

from posterior_lab import __version__
from posterior_lab.errors import ConfigError
from posterior_lab.logging_utils import configure_logging
from posterior_lab.models.experiment import PriorSpec
from posterior_lab.pipeline.umbrella import FreeEnergyProfile
from posterior_lab.sampler import BatchResult

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"
_LIBRARIES = ("numpy", "scipy", "pandas", "pydantic", "pydantic-settings")


def ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"output directory {path} is not writable: {e}", field="output_dir") from e
    return path


def write_csv(df: pd.DataFrame, path: Path) -> Path:
    """Header row, caller's column order, no index."""
    ensure_dir(path.parent)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("Wrote %d rows to %s", len(df), path)
    return path


def write_json(payload: dict[str, Any], path: Path) -> Path:
    ensure_dir(path.parent)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def read_json_file(path: Path, *, field: str) -> dict[str, Any]:
    """Parse a JSON object; any problem becomes a ConfigError naming `field`."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"file not found: {path}", field=field) from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}", field=field) from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a JSON object", field=field)
    return data


def load_prior_file(path: Path) -> PriorSpec:
    """GMM definition file: {dim, components: [{weight, mean, var}, ...]}."""
    configure_logging()
    data = read_json_file(path, field="prior")
    try:
        spec = PriorSpec.model_validate({"dim": data.get("dim"), "components": data.get("components")})
    except ValidationError as e:
        raise ConfigError(f"invalid GMM file {path}: {e}", field="prior") from e
    logger.info("Loaded %d-component prior from %s", len(spec.components or []), path)
    return spec


def _axis_columns(dim: int) -> list[str]:
    return [f"x_{j}" for j in range(dim)]


def finals_frame(batch: BatchResult) -> pd.DataFrame:
    dim = batch.finals.shape[1]
    df = pd.DataFrame(batch.finals, columns=_axis_columns(dim))
    df.insert(0, "traj_id", np.arange(batch.n_trajectories))
    return df


def trajectory_frame(batch: BatchResult) -> pd.DataFrame:
    """Long format: one row per (trajectory, step), steps N-1 .. 0 within each trajectory."""
    if not batch.recorded:
        raise ValueError("steps were not recorded for this batch")
    assert batch.x is not None and batch.w_t is not None
    assert batch.guidance_norm is not None and batch.prior_norm is not None
    n_steps, n, dim = batch.x.shape
    # (N, n, ...) -> trajectory-major rows
    df = pd.DataFrame(batch.x.transpose(1, 0, 2).reshape(n * n_steps, dim), columns=_axis_columns(dim))
    df.insert(0, "t", np.tile(batch.t, n))
    df.insert(0, "traj_id", np.repeat(np.arange(n), n_steps))
    df["w_t"] = batch.w_t.T.ravel()
    df["guidance_norm"] = batch.guidance_norm.T.ravel()
    df["prior_norm"] = batch.prior_norm.T.ravel()
    return df


def profile_frame(method: str, estimate: FreeEnergyProfile, truth: FreeEnergyProfile) -> pd.DataFrame:
    counts = estimate.coverage if estimate.coverage is not None else np.zeros(truth.f.size, dtype=np.int64)
    return pd.DataFrame(
        {
            "method": method,
            "bin_center": truth.bin_centers,
            "f_estimate": estimate.f,
            "f_truth": truth.f,
            "count": counts,
        }
    )


def library_versions() -> dict[str, str]:
    versions = {"posterior-lab": __version__, "python": platform.python_version()}
    for name in _LIBRARIES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def write_manifest(
    run_dir: Path,
    *,
    task: str,
    config: dict[str, Any],
    seed: int,
    wall_time_s: float,
    files: list[str],
    summary: dict[str, Any] | None = None,
) -> Path:
    """Run record. The timestamp lives here and nowhere else."""
    payload = {
        "status": "ok",
        "task": task,
        "config": config,
        "master_seed": seed,
        "versions": library_versions(),
        "wall_time_s": round(wall_time_s, 3),
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "files": sorted(files),
        "summary": summary or {},
    }
    return write_json(payload, run_dir / "manifest.json")


def write_error(
    run_dir: Path,
    *,
    kind: str,
    message: str,
    field: str | None = None,
    module: str | None = None,
    step: int | None = None,
) -> Path:
    payload: dict[str, Any] = {"status": "error", "kind": kind, "message": message}
    if field is not None:
        payload["field"] = field
    if module is not None:
        payload["module"] = module
        payload["step"] = step
    return write_json(payload, run_dir / "error.json")
