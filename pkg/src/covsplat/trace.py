"""JSONL event trace for tracking, mapping and evaluation.

One JSON object per line, written through a rotating file handler on the
``covsplat.trace`` logger. Environment:

* ``COVSPLAT_TRACE_DIR``: directory of ``covsplat_trace.log`` (default ``./logs``).
* ``COVSPLAT_TRACE_MAX_MB``: rotation size in decimal megabytes, clamped to [0.1, 1024].
* ``COVSPLAT_TRACE_BACKUPS``: rotated files kept, clamped to [0, 100].
* ``COVSPLAT_TRACE=0`` turns tracing off.
"""
from __future__ import annotations

import json
import logging
import logging.handlers
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

TRACE_FILE = "covsplat_trace.log"

_handler_logger: logging.Logger | None = None


def _env_number(name: str, default: float, lo: float, hi: float, cast=float) -> float:
    raw = os.environ.get(name, "").strip()
    try:
        value = cast(raw) if raw else default
    except ValueError:
        value = default
    return max(lo, min(value, hi))


def rotation_settings() -> tuple[int, int]:
    """``(maxBytes, backupCount)`` from the environment."""
    max_mb = _env_number("COVSPLAT_TRACE_MAX_MB", 10.0, 0.1, 1024.0)
    backups = int(_env_number("COVSPLAT_TRACE_BACKUPS", 5, 0, 100, cast=int))
    return int(round(max_mb * 1_000_000)), backups


def trace_enabled() -> bool:
    return os.environ.get("COVSPLAT_TRACE", "1").strip().lower() not in ("0", "false", "off", "no")


def trace_path() -> Path:
    raw = os.environ.get("COVSPLAT_TRACE_DIR", "").strip()
    directory = Path(raw) if raw else Path.cwd() / "logs"
    directory.mkdir(parents=True, exist_ok=True)
    return directory / TRACE_FILE


def _logger() -> logging.Logger:
    global _handler_logger
    if _handler_logger is None:
        logger = logging.getLogger("covsplat.trace")
        logger.setLevel(logging.INFO)
        logger.propagate = False
        logger.handlers.clear()
        max_bytes, backups = rotation_settings()
        fh = logging.handlers.RotatingFileHandler(trace_path(), maxBytes=max_bytes,
                                                  backupCount=backups, encoding="utf-8")
        fh.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(fh)
        _handler_logger = logger
    return _handler_logger


def close_trace() -> None:
    """Drop the file handler; the next event re-reads the environment."""
    global _handler_logger
    if _handler_logger is None:
        return
    for h in list(_handler_logger.handlers):
        h.close()
        _handler_logger.removeHandler(h)
    _handler_logger = None


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def append_trace(record: dict) -> None:
    """Write one event. Never raises; a failed write becomes a warning."""
    if not trace_enabled():
        return
    try:
        line = json.dumps({"ts": datetime.now(tz=timezone.utc).isoformat(), **record},
                          ensure_ascii=False, default=_jsonable)
        _logger().info(line)
    except Exception:
        logging.getLogger("covsplat").warning("append_trace failed", exc_info=True)
