"""Adaptive density control: split, clone, opacity and occlusion pruning."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..config import MappingConfig
from ..splat.gaussians import GaussianSet

log = logging.getLogger(__name__)


@dataclass
class DensityStats:
    split: int = 0
    cloned: int = 0
    pruned_opacity: int = 0
    pruned_occluded: int = 0


class GradientAccumulator:
    """Running screen-space and world-space position-gradient statistics keyed by Gaussian id."""

    def __init__(self) -> None:
        self.ids = np.zeros(0, dtype=np.int64)
        self.screen = np.zeros(0)
        self.world = np.zeros((0, 3))
        self.count = np.zeros(0, dtype=np.int64)

    def _align(self, ids: np.ndarray) -> None:
        if np.array_equal(ids, self.ids):
            return
        pos = {int(g): k for k, g in enumerate(self.ids)}
        src = np.array([pos.get(int(g), -1) for g in ids], dtype=np.int64)
        have = src >= 0
        screen, world, count = np.zeros(len(ids)), np.zeros((len(ids), 3)), np.zeros(len(ids), dtype=np.int64)
        screen[have] = self.screen[src[have]]
        world[have] = self.world[src[have]]
        count[have] = self.count[src[have]]
        self.ids, self.screen, self.world, self.count = ids.copy(), screen, world, count

    def add(self, ids: np.ndarray, grad_mean2d: np.ndarray, grad_position: np.ndarray, visible: np.ndarray) -> None:
        self._align(ids)
        self.screen[visible] += np.linalg.norm(grad_mean2d[visible], axis=1)
        self.world[visible] += grad_position[visible]
        self.count[visible] += 1

    def mean_screen(self, ids: np.ndarray) -> np.ndarray:
        self._align(ids)
        return np.where(self.count > 0, self.screen / np.maximum(self.count, 1), 0.0)

    def world_direction(self, ids: np.ndarray) -> np.ndarray:
        self._align(ids)
        return self.world

    def reset(self) -> None:
        self.__init__()


def scene_extent(positions: np.ndarray) -> float:
    """Radius of the bounding sphere centred on the positions' bounding box."""
    if len(positions) == 0:
        return 0.0
    center = 0.5 * (positions.min(axis=0) + positions.max(axis=0))
    return float(np.max(np.linalg.norm(positions - center, axis=1)))


def densify(
    gaussians: GaussianSet, mean_grad: np.ndarray, grad_direction: np.ndarray, cfg: MappingConfig
) -> tuple[GaussianSet, DensityStats]:
    """Split large high-gradient Gaussians into two, clone small ones along the descent direction."""
    stats = DensityStats()
    selected = mean_grad > cfg.densify_grad_threshold
    if not np.any(selected):
        return gaussians, stats
    scales = gaussians.scales
    extent = scene_extent(gaussians.positions)
    big = scales.max(axis=1) > cfg.split_extent_fraction * extent
    split = selected & big
    clone = selected & ~big
    out = gaussians.copy()

    if np.any(clone):
        idx = np.flatnonzero(clone)
        d = grad_direction[idx]
        norm = np.linalg.norm(d, axis=1, keepdims=True)
        step = np.where(norm > 0, -d / np.where(norm > 0, norm, 1.0), 0.0) * scales[idx].max(axis=1, keepdims=True)
        out.append(gaussians.positions[idx] + step, gaussians.rotations[idx], gaussians.log_scales[idx],
                   gaussians.opacity_logits[idx], gaussians.colors[idx], gaussians.seed_keyframe[idx])
        stats.cloned = len(idx)

    if np.any(split):
        idx = np.flatnonzero(split)
        R = gaussians.rotation_matrices()[idx]
        axis = np.argmax(scales[idx], axis=1)
        offset = R[np.arange(len(idx)), :, axis] * scales[idx, axis][:, None]
        new_ls = gaussians.log_scales[idx] - math.log(cfg.split_scale_divisor)
        for sign in (1.0, -1.0):
            out.append(gaussians.positions[idx] + sign * offset, gaussians.rotations[idx], new_ls,
                       gaussians.opacity_logits[idx], gaussians.colors[idx], gaussians.seed_keyframe[idx])
        parents = np.isin(out.ids, gaussians.ids[idx])
        out = out.subset(~parents)
        stats.split = len(idx)
    return out, stats


def prune_low_opacity(gaussians: GaussianSet, min_opacity: float) -> tuple[GaussianSet, int]:
    keep = gaussians.opacities >= min_opacity
    return gaussians.subset(keep), int(np.count_nonzero(~keep))


def prune_occluded(
    gaussians: GaussianSet, visibility: np.ndarray, keyframe_id: int, min_weight: float = 0.0
) -> tuple[GaussianSet, int]:
    """Drop Gaussians seeded from ``keyframe_id`` that contribute nothing when rendered from it."""
    drop = (gaussians.seed_keyframe == keyframe_id) & (visibility <= min_weight)
    return gaussians.subset(~drop), int(np.count_nonzero(drop))


def densify_and_prune(
    gaussians: GaussianSet,
    mean_grad: np.ndarray,
    grad_direction: np.ndarray,
    cfg: MappingConfig,
) -> tuple[GaussianSet, DensityStats]:
    out, stats = densify(gaussians, mean_grad, grad_direction, cfg)
    out, stats.pruned_opacity = prune_low_opacity(out, cfg.prune_opacity)
    log.debug("densify/prune: split=%d cloned=%d pruned=%d -> %d Gaussians",
              stats.split, stats.cloned, stats.pruned_opacity, len(out))
    return out, stats
