"""Flow oracle from known poses and depths, with optional pixel noise."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict

import cv2
import numpy as np

from ..geometry import PinholeCamera, SE3Pose, reproject_field
from .base import FlowProvider, FlowRevision, mean_displacement

log = logging.getLogger(__name__)

_CONF_MIN = 1e-6
_CONF_MAX = 1e6
_VAR_EPS = 1e-6


def solver_inverse_depth(depth: np.ndarray, factor: int) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear inverse depth at ``1/factor`` resolution plus a validity mask.

    Samples that mix in an invalid (``<= 0``) full-resolution depth are invalid.
    """
    depth = np.asarray(depth, dtype=float)
    h, w = depth.shape
    hs, ws = h // factor, w // factor
    valid = depth > 0
    inv = np.where(valid, 1.0 / np.where(valid, depth, 1.0), 0.0)
    if factor == 1:
        return inv, valid
    inv_s = cv2.resize(inv, (ws, hs), interpolation=cv2.INTER_LINEAR)
    valid_s = cv2.resize(valid.astype(np.float64), (ws, hs), interpolation=cv2.INTER_LINEAR)
    ok = valid_s >= 1.0 - 1e-9
    return np.where(ok, inv_s, 0.0), ok


@dataclass
class _Truth:
    pose: SE3Pose
    inv_depth: np.ndarray
    valid: np.ndarray


class GroundTruthProvider(FlowProvider):
    """Targets are the true reprojection of frame i into frame j.

    ``noise_px`` is a standard deviation in full-resolution pixels; noise is a
    deterministic function of ``(seed, i, j)``.
    """

    def __init__(self, camera: PinholeCamera, noise_px: float = 0.0, seed: int = 0, pixel_scale: float = 1.0):
        super().__init__()
        self.camera = camera
        self.noise_px = float(noise_px)
        self.seed = int(seed)
        self.pixel_scale = float(pixel_scale)
        self._truth: Dict[Any, _Truth] = {}

    def register(self, handle: Any, pose: SE3Pose, inv_depth: np.ndarray, valid: np.ndarray | None = None) -> None:
        inv_depth = np.asarray(inv_depth, dtype=float)
        if inv_depth.shape != self.camera.shape:
            raise ValueError(f"inverse depth {inv_depth.shape} does not match solver grid {self.camera.shape}")
        if valid is None:
            valid = inv_depth > 0
        self._truth[handle] = _Truth(pose, np.where(valid, inv_depth, 1.0), np.asarray(valid, dtype=bool))
        self._registered.add(handle)

    @property
    def _sigma_solver(self) -> float:
        return self.noise_px / self.pixel_scale

    def _confidence_value(self) -> float:
        if self.noise_px == 0.0:
            return 1.0
        return float(np.clip(1.0 / (self._sigma_solver**2 + _VAR_EPS), _CONF_MIN, _CONF_MAX))

    def _targets(self, hi: Any, hj: Any) -> tuple[np.ndarray, np.ndarray]:
        ti, tj = self._truth[hi], self._truth[hj]
        coords, valid = reproject_field(ti.pose, tj.pose, self.camera, ti.inv_depth)
        valid &= ti.valid
        if self.noise_px > 0.0:
            rng = np.random.default_rng([self.seed, int(hi), int(hj)])
            coords = coords + rng.normal(0.0, self._sigma_solver, size=coords.shape)
        return coords, valid

    def flow_revision(self, frame_i: Any, frame_j: Any, current_reprojection: np.ndarray) -> FlowRevision:
        hi, hj = self._require(frame_i), self._require(frame_j)
        targets, valid = self._targets(hi, hj)
        current = np.asarray(current_reprojection, dtype=float)
        conf = np.where(valid[..., None], self._confidence_value(), 0.0) * np.ones_like(current)
        revision = np.where(valid[..., None], targets - current, 0.0)
        return FlowRevision(revision, conf)

    def mean_flow(self, frame_i: Any, frame_j: Any) -> float:
        hi, hj = self._require(frame_i), self._require(frame_j)
        if hi == hj:
            return 0.0
        targets, valid = self._targets(hi, hj)
        return mean_displacement(targets, valid, self.pixel_scale)
