"""Run outputs: TUM-style trajectory text and JSONL metrics."""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import MalformedLine, MissingIndex
from .geometry import SE3Pose
from .metrics import EvalReport

log = logging.getLogger(__name__)

TRAJECTORY_FILE = "trajectory.txt"
METRICS_FILE = "metrics.jsonl"


def _num(v: float) -> str:
    return repr(float(v))


def format_pose_line(timestamp: float, pose: SE3Pose) -> str:
    qw, qx, qy, qz = pose.rotation
    return " ".join(_num(v) for v in (timestamp, *pose.translation, qx, qy, qz, qw))


def write_trajectory(path: str | Path, timestamps: Sequence[float], poses: Sequence[SE3Pose]) -> Path:
    """One ``timestamp tx ty tz qx qy qz qw`` line per pose."""
    if len(timestamps) != len(poses):
        raise ValueError("timestamps and poses differ in length")
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    lines += [format_pose_line(ts, pose) for ts, pose in zip(timestamps, poses)]
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def read_trajectory(path: str | Path) -> Tuple[List[float], List[SE3Pose]]:
    p = Path(path)
    if not p.exists():
        raise MissingIndex(f"{p} not found")
    timestamps, poses = [], []
    for n, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        body = line.strip()
        if not body or body.startswith("#"):
            continue
        parts = body.split()
        if len(parts) != 8:
            raise MalformedLine(n, str(p), f"expected 8 fields, got {len(parts)}")
        try:
            ts, tx, ty, tz, qx, qy, qz, qw = (float(v) for v in parts)
        except ValueError:
            raise MalformedLine(n, str(p), "fields are not numbers") from None
        timestamps.append(ts)
        poses.append(SE3Pose(np.array([qw, qx, qy, qz]), [tx, ty, tz]))
    return timestamps, poses


def _jsonable(value: Any) -> Any:
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_metrics(path: str | Path, report: EvalReport, extra: Dict[str, Any] | None = None) -> Path:
    """One JSON object per evaluated frame, then a summary object."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as f:
        for row in report.frames().to_dict(orient="records"):
            entry = {"type": "frame", **{k: _jsonable(v) for k, v in row.items()}}
            f.write(json.dumps(entry, sort_keys=True) + "\n")
        summary = {"type": "summary", **{k: _jsonable(v) for k, v in report.summary().items()}}
        if extra:
            summary.update({k: _jsonable(v) for k, v in extra.items()})
        f.write(json.dumps(summary, sort_keys=True) + "\n")
    return p


def read_metrics(path: str | Path) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """Per-frame table and the summary object."""
    p = Path(path)
    if not p.exists():
        raise MissingIndex(f"{p} not found")
    rows, summary = [], {}
    for n, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(n, str(p), str(exc)) from None
        if obj.get("type") == "summary":
            summary = obj
        else:
            rows.append(obj)
    return pd.DataFrame(rows, columns=["frame", "psnr", "ssim", "depth_l1"]), summary
