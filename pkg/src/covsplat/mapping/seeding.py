"""Seed new Gaussians from a keyframe pyramid level."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import EmptyMask
from .pyramid import PyramidLevel

_NEIGHBOURS = 3


@dataclass
class Seeds:
    positions: np.ndarray
    colors: np.ndarray
    log_scales: np.ndarray
    pixels: np.ndarray  # (n, 2) source (u, v) at level resolution

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def rotations(self) -> np.ndarray:
        return np.tile([1.0, 0.0, 0.0, 0.0], (len(self), 1))

    @property
    def opacity_logits(self) -> np.ndarray:
        return np.zeros(len(self))


def _isotropic_scales(points: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    n = len(points)
    if n < 2:
        return fallback
    k = min(_NEIGHBOURS, n - 1) + 1
    dist, _ = cKDTree(points).query(points, k=k)
    mean_sq = np.mean(dist[:, 1:] ** 2, axis=1)
    return np.where(mean_sq > 0, np.sqrt(mean_sq), fallback)


def seed_gaussians(level: PyramidLevel, theta: int, mask: np.ndarray, rng: np.random.Generator) -> Seeds:
    """Sample ``ceil(valid / theta)`` masked pixels without replacement and lift them to world space."""
    if mask.shape != level.shape:
        raise ValueError(f"mask {mask.shape} does not match level {level.shape}")
    n_valid = int(np.count_nonzero(level.valid))
    candidates = np.flatnonzero(mask & level.valid)
    if n_valid == 0 or candidates.size == 0:
        raise EmptyMask(f"no seedable pixels at level {level.level}")
    count = min(math.ceil(n_valid / theta), candidates.size)
    pick = np.sort(rng.choice(candidates, size=count, replace=False))
    v, u = np.divmod(pick, level.shape[1])
    z = level.depth.reshape(-1)[pick]
    cam = level.camera
    X_c = np.stack([(u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z], axis=-1)
    X_w = level.pose.transform(X_c)
    colors = level.image.reshape(-1, 3)[pick].copy()
    scales = _isotropic_scales(X_w, z / cam.fx)
    return Seeds(
        positions=X_w,
        colors=colors,
        log_scales=np.repeat(np.log(scales)[:, None], 3, axis=1),
        pixels=np.stack([u, v], axis=-1).astype(float),
    )
