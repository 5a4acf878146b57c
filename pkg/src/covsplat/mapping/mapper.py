"""Sliding-window map optimisation and post-processing."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from ..config import MappingConfig
from ..errors import EmptyMask
from ..geometry import PinholeCamera, SE3Pose
from ..splat.gaussians import GaussianSet
from ..splat.rasterizer import RenderedFrame, rasterize, rasterize_backward
from ..trace import append_trace
from .density import DensityStats, GradientAccumulator, densify_and_prune, prune_occluded
from .loss import LossResult, mapping_loss
from .mask import covariance_mask
from .optimizer import Adam, group_learning_rates
from .pyramid import KeyframePacket, PyramidLevel, build_pyramid
from .seeding import seed_gaussians

log = logging.getLogger(__name__)


@dataclass
class MappingStats:
    iterations: int = 0
    seeded: int = 0
    losses: List[float] = field(default_factory=list)
    density: DensityStats = field(default_factory=DensityStats)

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def split_budget(total: int, levels: int) -> List[int]:
    """Per-level iterations, coarsest first; any remainder goes to the finest levels."""
    base, rem = divmod(max(total, 0), levels)
    return [base + (1 if k >= levels - rem else 0) for k in range(levels)]


class Mapper:
    """Owns the Gaussian map and the keyframes handed over by tracking."""

    def __init__(self, config: MappingConfig | None = None, rng_seed: int = 0):
        self.config = config or MappingConfig()
        self.gaussians = GaussianSet()
        self.window: List[KeyframePacket] = []
        self.keyframes: Dict[int, KeyframePacket] = {}
        self.iteration = 0
        self.rng_seed = rng_seed
        self.optimizer = Adam.from_config(self.config)
        self.grad_stats = GradientAccumulator()
        self._rng = np.random.default_rng(rng_seed)
        self._pyramids: Dict[int, Tuple[int, List[PyramidLevel]]] = {}

    # keyframe handoff
    def accept(self, packet: KeyframePacket) -> bool:
        """Take ``packet`` into the window unless it is already there."""
        if any(p.keyframe_id == packet.keyframe_id for p in self.window):
            return False
        self.window.append(packet)
        self.keyframes[packet.keyframe_id] = packet
        if len(self.window) > self.config.window_keyframes:
            self.window.pop(0)
        return True

    def refresh(self, keyframe_id: int, pose: SE3Pose, depth: np.ndarray, covariance: np.ndarray) -> None:
        """Replace tracking state of a stored keyframe (pose, depth, covariance)."""
        old = self.keyframes.get(keyframe_id)
        if old is None:
            return
        new = KeyframePacket(old.keyframe_id, old.image, depth, covariance, pose, old.camera,
                             old.frame_index, old.version + 1)
        self.keyframes[keyframe_id] = new
        self.window = [new if p.keyframe_id == keyframe_id else p for p in self.window]

    def pyramid(self, packet: KeyframePacket) -> List[PyramidLevel]:
        cached = self._pyramids.get(packet.keyframe_id)
        if cached is not None and cached[0] == packet.version:
            return cached[1]
        levels = build_pyramid(packet, self.config.downsample_factor, self.config.pyramid_levels)
        self._pyramids[packet.keyframe_id] = (packet.version, levels)
        return levels

    # rendering and one optimisation step
    def render(self, pose: SE3Pose, camera: PinholeCamera) -> RenderedFrame:
        return rasterize(self.gaussians, pose.inverse(), camera, workers=self.config.raster_workers)

    def _train_step(self, level: PyramidLevel, track_density: bool) -> LossResult:
        cfg = self.config
        T_cw = level.pose.inverse()
        rendered = rasterize(self.gaussians, T_cw, level.camera, workers=cfg.raster_workers)
        loss = mapping_loss(rendered, level, cfg.color_loss_weight, cfg.depth_loss, cfg.depth_eps,
                            cfg.depth_alpha_min)
        grads = rasterize_backward(self.gaussians, T_cw, level.camera, loss.grad_color, loss.grad_depth,
                                   workers=cfg.raster_workers)
        if track_density:
            self.grad_stats.add(self.gaussians.ids, grads.mean2d, grads.positions, rendered.visibility > 0)
        self.optimizer.step(self.gaussians, grads.as_dict(), group_learning_rates(cfg, self.iteration))
        self.iteration += 1
        return loss

    def _seed(self, packet: KeyframePacket, level: PyramidLevel) -> int:
        cfg = self.config
        mask = covariance_mask(level.covariance, cfg.mask_threshold, cfg.mask_filter_px)
        try:
            seeds = seed_gaussians(level, cfg.seed_stride_px, mask, self._rng)
        except EmptyMask:
            log.warning("keyframe %d level %d: nothing to seed", packet.keyframe_id, level.level)
            return 0
        self.gaussians.append(seeds.positions, seeds.rotations, seeds.log_scales, seeds.opacity_logits,
                              seeds.colors, packet.keyframe_id)
        return len(seeds)

    def _densify(self, stats: MappingStats) -> None:
        cfg = self.config
        ids = self.gaussians.ids
        self.gaussians, d = densify_and_prune(
            self.gaussians, self.grad_stats.mean_screen(ids), self.grad_stats.world_direction(ids), cfg)
        self.grad_stats.reset()
        self.optimizer.sync(self.gaussians)
        stats.density.split += d.split
        stats.density.cloned += d.cloned
        stats.density.pruned_opacity += d.pruned_opacity
        append_trace({"event": "densify_prune", "iteration": self.iteration, "split": d.split,
                      "cloned": d.cloned, "pruned": d.pruned_opacity, "gaussians": len(self.gaussians)})

    def optimize_window(self, iterations: int | None = None) -> MappingStats:
        """Coarse-to-fine optimisation over the window.

        Each level seeds from the newest keyframe before its first step, then
        renders window keyframes round-robin, newest first.
        """
        cfg = self.config
        stats = MappingStats()
        if not self.window:
            return stats
        budget = cfg.iterations_per_keyframe if iterations is None else iterations
        if budget <= 0:
            return stats
        latest = self.window[-1]
        order = list(reversed(self.window))
        step = 0
        for lvl, n_iters in zip(range(cfg.pyramid_levels - 1, -1, -1), split_budget(budget, cfg.pyramid_levels)):
            if n_iters == 0:
                continue
            stats.seeded += self._seed(latest, self.pyramid(latest)[lvl])
            for _ in range(n_iters):
                packet = order[step % len(order)]
                step += 1
                loss = self._train_step(self.pyramid(packet)[lvl], track_density=True)
                stats.losses.append(loss.loss)
                stats.iterations += 1
                if self.iteration % cfg.densify_interval_iters == 0:
                    self._densify(stats)

        level0 = self.pyramid(latest)[0]
        vis = rasterize(self.gaussians, level0.pose.inverse(), level0.camera, workers=cfg.raster_workers).visibility
        self.gaussians, stats.density.pruned_occluded = prune_occluded(
            self.gaussians, vis, latest.keyframe_id, cfg.visibility_min_weight)
        self.optimizer.sync(self.gaussians)
        append_trace({"event": "mapping_cycle", "keyframe": latest.keyframe_id, "iterations": stats.iterations,
                      "seeded": stats.seeded, "gaussians": len(self.gaussians), "loss": stats.final_loss,
                      "pruned_occluded": stats.density.pruned_occluded})
        log.debug("mapping cycle kf=%d: %d its, %d Gaussians, loss %.4f",
                  latest.keyframe_id, stats.iterations, len(self.gaussians), stats.final_loss)
        return stats

    def post_process(self, beta: int | None = None, rng_seed: int | None = None) -> MappingStats:
        """``beta`` single-keyframe steps at full resolution on uniformly drawn keyframes."""
        beta = self.config.post_process_iterations if beta is None else beta
        if beta < 0:
            raise ValueError("beta must be >= 0")
        stats = MappingStats()
        if beta == 0 or not self.keyframes:
            return stats
        rng = np.random.default_rng(self.rng_seed if rng_seed is None else rng_seed)
        ids = sorted(self.keyframes)
        for _ in range(beta):
            packet = self.keyframes[ids[int(rng.integers(len(ids)))]]
            loss = self._train_step(self.pyramid(packet)[0], track_density=False)
            stats.losses.append(loss.loss)
            stats.iterations += 1
        append_trace({"event": "post_process", "iterations": beta, "gaussians": len(self.gaussians),
                      "loss": stats.final_loss})
        return stats
