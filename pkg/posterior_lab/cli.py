"""Command-line entry point: posterior-lab {sample,umbrella,diagnose,curves,validate-config}.

Precedence: flags > config file > defaults. Exit codes: 0 success, 2 config error,
3 numerical failure, 1 anything else. Failures write error.json to the output directory.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from posterior_lab import store
from posterior_lab.config import get_settings
from posterior_lab.errors import ConfigError, NumericalError
from posterior_lab.gmm import PRESETS
from posterior_lab.logging_utils import configure_logging, log_context
from posterior_lab.models.experiment import ExperimentConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

TASKS = ("sample", "umbrella", "diagnose", "curves")


def _common_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=Path, help="Experiment config (JSON)")
    prior = parent.add_mutually_exclusive_group()
    prior.add_argument("--preset", choices=sorted(PRESETS), help="Built-in prior")
    prior.add_argument("--prior-file", type=Path, help="GMM definition file (JSON)")
    parent.add_argument("--method", choices=["exact", "dps", "dpsw", "none"], help="Guidance method")
    parent.add_argument(
        "--sigma-y", type=float, help="Measurement noise (window width for umbrella)"
    )
    parent.add_argument("--steps", type=int, help="Reverse steps (respaced from the base schedule)")
    parent.add_argument("--process", choices=["vp", "ve"], help="Noise process")
    parent.add_argument("--seed", type=int, help="Master seed")
    parent.add_argument("--trajectories", type=int, help="Trajectories for the sample task")
    parent.add_argument("--output-dir", type=Path, help="Output directory")
    parent.add_argument("--jobs", type=int, help="Worker threads (default: sequential)")
    parent.add_argument(
        "--record-steps", action="store_true", default=None, help="Write per-step trajectories"
    )
    parent.add_argument("--log-level", default=None, help="DEBUG|INFO|WARNING|ERROR")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _common_flags()
    parser = argparse.ArgumentParser(
        prog="posterior-lab",
        description="Guided-diffusion posterior sampling on analytic Gaussian-mixture priors",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[parent], help="Sample trajectories; writes finals.csv")
    sub.add_parser("umbrella", parents=[parent], help="Umbrella sampling + WHAM; writes profile.csv")
    sub.add_parser("diagnose", parents=[parent], help="Posterior necessary conditions")
    sub.add_parser("curves", parents=[parent], help="w_t and term-ratio curves")
    sub.add_parser(
        "validate-config", parents=[parent], help="Validate a config (with flags applied) and exit"
    )
    return parser


def _set(data: dict[str, Any], dotted: str, value: Any) -> None:
    *parents, leaf = dotted.split(".")
    node = data
    for key in parents:
        node = node.setdefault(key, {})
    node[leaf] = value


def merge_flags(data: dict[str, Any], args: argparse.Namespace, task: str) -> dict[str, Any]:
    """Overlay command-line flags on file values."""
    data = dict(data)
    if task in TASKS:
        data["task"] = task
    if args.preset is not None:
        data["prior"] = {"preset": args.preset}
    if args.prior_file is not None:
        spec = store.load_prior_file(args.prior_file)
        data["prior"] = spec.model_dump(exclude_none=True)
    if args.method is not None:
        _set(data, "guidance.method", args.method)
        if data.get("task") == "umbrella":
            _set(data, "umbrella.methods", [args.method])
    if args.sigma_y is not None:
        field = "umbrella.sigma_y" if data.get("task") == "umbrella" else "measurement.sigma_y"
        _set(data, field, args.sigma_y)
    if args.steps is not None:
        _set(data, "schedule.steps", args.steps)
    if args.process is not None:
        _set(data, "schedule.process", args.process)
    if args.seed is not None:
        data["master_seed"] = args.seed
    if args.trajectories is not None:
        data["trajectories"] = args.trajectories
    if args.output_dir is not None:
        data["output_dir"] = str(args.output_dir)
    if args.jobs is not None:
        data["jobs"] = args.jobs
    if args.record_steps:
        data["record_steps"] = True
    return data


def load_config(args: argparse.Namespace, task: str) -> ExperimentConfig:
    data = store.read_json_file(args.config, field="config") if args.config is not None else {}
    merged = merge_flags(data, args, task)
    # Umbrella runs stay on VE when flags set other schedule fields.
    schedule = merged.get("schedule")
    if isinstance(schedule, dict) and "process" not in schedule and merged.get("task") == "umbrella":
        schedule["process"] = "ve"
    return ExperimentConfig.model_validate(merged)


def _error_dir(args: argparse.Namespace, config: ExperimentConfig | None, task: str) -> Path:
    if args.output_dir is not None:
        return args.output_dir
    if config is not None and config.output_dir is not None:
        return config.output_dir
    return get_settings().output_path / task


def _validation_field(e: ValidationError) -> str | None:
    errors = e.errors()
    if not errors:
        return None
    loc = [str(p) for p in errors[0].get("loc", ())]
    return ".".join(loc) or None


def _report(
    args: argparse.Namespace,
    config: ExperimentConfig | None,
    task: str,
    **payload: Any,
) -> None:
    try:
        store.write_error(_error_dir(args, config, task), **payload)
    except (ConfigError, OSError) as e:
        logger.error("Could not write error.json: %s", e)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(level=args.log_level)
    task = args.command
    config: ExperimentConfig | None = None
    try:
        config = load_config(args, task)
        if task == "validate-config":
            print(f"ok: task={config.task}")
            return EXIT_OK
        from posterior_lab.pipeline.tasks import run_task

        result = run_task(config)
        print(f"{result.task}: wrote {', '.join(result.files)} to {result.output_dir}")
        return EXIT_OK
    except ValidationError as e:
        field = _validation_field(e)
        logger.error("Invalid configuration: %s", e, extra=log_context(kind="config", field=field))
        _report(args, config, task, kind="config", message=str(e), field=field)
        return EXIT_CONFIG
    except ConfigError as e:
        logger.error("Invalid configuration: %s", e, extra=log_context(kind="config", field=e.field))
        _report(args, config, task, kind="config", message=str(e), field=e.field)
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(
            "Numerical failure: %s", e, extra=log_context(kind="numerical", module=e.module, step=e.step)
        )
        _report(args, config, task, kind="numerical", message=str(e), module=e.module, step=e.step)
        return EXIT_NUMERICAL
    except Exception as e:
        logger.exception("Run failed", extra=log_context(kind="internal", task=task))
        _report(args, config, task, kind="internal", message=str(e))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
