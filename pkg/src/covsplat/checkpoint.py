"""Map checkpoints: an IGS1 Gaussian file plus a JSON metadata sidecar."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from .errors import DatasetError
from .geometry import PinholeCamera, SE3Pose
from .splat.gaussians import GaussianSet, load_gaussians, save_gaussians

log = logging.getLogger(__name__)

CHECKPOINT_FILE = "map.igs"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    gaussians: GaussianSet
    camera: PinholeCamera
    iteration: int = 0
    config_hash: str = ""
    rng_seed: int = 0
    keyframe_poses: Dict[int, SE3Pose] = field(default_factory=dict)
    keyframe_frames: Dict[int, int] = field(default_factory=dict)


def metadata_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def _pose_to_list(pose: SE3Pose) -> list:
    return [float(v) for v in (*pose.translation, *pose.rotation)]


def _pose_from_list(values: list) -> SE3Pose:
    return SE3Pose(np.array(values[3:7], dtype=float), values[:3])


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    p = Path(path)
    save_gaussians(p, ckpt.gaussians)
    meta = {
        "format": FORMAT_VERSION,
        "gaussians": len(ckpt.gaussians),
        "iteration": int(ckpt.iteration),
        "config_hash": ckpt.config_hash,
        "rng_seed": int(ckpt.rng_seed),
        "camera": dict(zip(("fx", "fy", "cx", "cy", "width", "height"), ckpt.camera.to_tuple())),
        # translation then scalar-first quaternion
        "keyframes": {str(k): _pose_to_list(v) for k, v in sorted(ckpt.keyframe_poses.items())},
        "keyframe_frames": {str(k): int(v) for k, v in sorted(ckpt.keyframe_frames.items())},
    }
    metadata_path(p).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("checkpoint %s: %d Gaussians at iteration %d", p, len(ckpt.gaussians), ckpt.iteration)
    return p


def load_checkpoint(path: str | Path) -> Checkpoint:
    p = Path(path)
    meta_p = metadata_path(p)
    if not p.exists() or not meta_p.exists():
        raise DatasetError(f"checkpoint {p} or its metadata {meta_p.name} is missing")
    try:
        meta = json.loads(meta_p.read_text(encoding="utf-8"))
        cam = meta["camera"]
        camera = PinholeCamera(float(cam["fx"]), float(cam["fy"]), float(cam["cx"]), float(cam["cy"]),
                               int(cam["width"]), int(cam["height"]))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"unreadable checkpoint metadata {meta_p}: {exc}") from exc
    try:
        gaussians = load_gaussians(p)
    except ValueError as exc:
        raise DatasetError(str(exc)) from exc
    return Checkpoint(
        gaussians=gaussians,
        camera=camera,
        iteration=int(meta.get("iteration", 0)),
        config_hash=str(meta.get("config_hash", "")),
        rng_seed=int(meta.get("rng_seed", 0)),
        keyframe_poses={int(k): _pose_from_list(v) for k, v in meta.get("keyframes", {}).items()},
        keyframe_frames={int(k): int(v) for k, v in meta.get("keyframe_frames", {}).items()},
    )
