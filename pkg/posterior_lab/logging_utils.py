"""Central logging setup for posterior_lab.

Call `configure_logging()` once at process startup (task entry points do this for you).
Repeated calls are no-ops once the root logger has a handler.

Records may carry run context (sampler step, failing module, error kind) through
`extra=log_context(...)`; both formatters render it.
"""

from __future__ import annotations

import json
import logging
import os
from datetime import datetime, timezone
from typing import Any

CONTEXT_ATTR = "lab_context"


def log_context(**fields: Any) -> dict[str, dict[str, Any]]:
    """`extra=` payload for a record; None values are dropped."""
    return {CONTEXT_ATTR: {k: v for k, v in fields.items() if v is not None}}


def record_context(record: logging.LogRecord) -> dict[str, Any]:
    return dict(getattr(record, CONTEXT_ATTR, None) or {})


class _JsonFormatter(logging.Formatter):
    """One JSON object per record, context fields at the top level."""

    def format(self, record: logging.LogRecord) -> str:
        payload: dict[str, Any] = {
            "ts": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        for key, value in record_context(record).items():
            payload.setdefault(key, value)
        if record.exc_info:
            payload["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(payload, ensure_ascii=False, default=str)


class _TextFormatter(logging.Formatter):
    """Pipe-separated line with a trailing `[key=value ...]` context block."""

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        ctx = record_context(record)
        if not ctx:
            return line
        head, sep, tail = line.partition("\n")
        fields = " ".join(f"{k}={v}" for k, v in ctx.items())
        return f"{head} [{fields}]{sep}{tail}"


def _env_bool(name: str, default: bool = False) -> bool:
    v = os.getenv(name)
    if v is None:
        return default
    return v.strip().lower() in {"1", "true", "yes", "y", "on"}


def build_handler(json_logs: bool) -> logging.Handler:
    handler = logging.StreamHandler()
    if json_logs:
        handler.setFormatter(_JsonFormatter())
    else:
        handler.setFormatter(
            _TextFormatter(
                fmt="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
                datefmt="%Y-%m-%d %H:%M:%S",
            )
        )
    return handler


def configure_logging(*, level: str | None = None, json_logs: bool | None = None) -> None:
    """Configure root logging once (idempotent).

    Env:
      - POSTERIOR_LAB_LOG_LEVEL: DEBUG|INFO|WARNING|ERROR (default INFO)
      - POSTERIOR_LAB_LOG_JSON: true/false (default false)
    """
    root = logging.getLogger()
    if root.handlers:
        return

    level = (level or os.getenv("POSTERIOR_LAB_LOG_LEVEL", "INFO")).upper()
    json_logs = _env_bool("POSTERIOR_LAB_LOG_JSON", False) if json_logs is None else json_logs

    root.addHandler(build_handler(json_logs))
    root.setLevel(level)
