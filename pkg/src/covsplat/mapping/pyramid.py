"""Keyframe packets and their coarse-to-fine pyramids."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import cv2
import numpy as np

from ..errors import DegenerateLevel
from ..geometry import PinholeCamera, SE3Pose


@dataclass
class KeyframePacket:
    """Tracking-to-mapping handoff at full image resolution."""

    keyframe_id: int
    image: np.ndarray            # (H, W, 3) in [0, 1]
    depth: np.ndarray            # (H, W) scene units, <= 0 where invalid
    depth_covariance: np.ndarray  # (H, W) >= 0
    pose: SE3Pose                # camera-to-world
    camera: PinholeCamera
    frame_index: int = -1
    version: int = 0

    def __post_init__(self) -> None:
        self.image = np.asarray(self.image, dtype=float)
        self.depth = np.asarray(self.depth, dtype=float)
        self.depth_covariance = np.asarray(self.depth_covariance, dtype=float)
        h, w = self.depth.shape
        if self.image.shape != (h, w, 3) or self.depth_covariance.shape != (h, w):
            raise ValueError("packet image, depth and covariance dimensions differ")
        if (h, w) != self.camera.shape:
            raise ValueError("packet dimensions do not match the camera")
        if np.any(self.depth_covariance < 0):
            raise ValueError("depth covariance must be >= 0")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth > 0)


@dataclass
class PyramidLevel:
    level: int
    image: np.ndarray
    depth: np.ndarray
    covariance: np.ndarray
    valid: np.ndarray
    camera: PinholeCamera
    pose: SE3Pose = field(default_factory=SE3Pose)

    @property
    def shape(self):
        return self.depth.shape


def level_shape(height: int, width: int, s: float, level: int) -> tuple[int, int]:
    ratio = s**level
    return int(math.floor(height * ratio + 1e-9)), int(math.floor(width * ratio + 1e-9))


def _resize(a: np.ndarray, w: int, h: int) -> np.ndarray:
    return cv2.resize(np.ascontiguousarray(a, dtype=np.float64), (w, h), interpolation=cv2.INTER_LINEAR)


def build_pyramid(packet: KeyframePacket, s: float, levels: int) -> List[PyramidLevel]:
    """Level 0 is the packet itself; level ``l`` is resampled bilinearly to ``floor(dims * s**l)``."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if not 0.0 < s < 1.0:
        raise ValueError("downsample factor must lie in (0, 1)")
    H, W = packet.depth.shape
    valid0 = packet.valid
    out = [PyramidLevel(0, packet.image.copy(), packet.depth.copy(), packet.depth_covariance.copy(),
                        valid0, packet.camera, packet.pose)]
    depth0 = np.where(valid0, packet.depth, 0.0)
    for lvl in range(1, levels):
        h, w = level_shape(H, W, s, lvl)
        if h == 0 or w == 0:
            raise DegenerateLevel(f"level {lvl} of a {W}x{H} image collapses to {w}x{h}")
        valid = _resize(valid0.astype(np.float64), w, h) >= 1.0 - 1e-9
        out.append(PyramidLevel(
            level=lvl,
            image=_resize(packet.image, w, h),
            depth=np.where(valid, _resize(depth0, w, h), 0.0),
            covariance=np.maximum(_resize(packet.depth_covariance, w, h), 0.0),
            valid=valid,
            camera=packet.camera.resized(w, h),
            pose=packet.pose,
        ))
    return out
