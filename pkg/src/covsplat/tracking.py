"""Frame-by-frame tracking: keyframe selection, local DBA and periodic global BA."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import TrackingConfig
from .dba import BAReport, ba_iterate, edge_jacobians, refine_pose
from .errors import DatasetError, NoValidPixels
from .flow import FlowProvider, GroundTruthProvider, create_flow_provider, solver_inverse_depth
from .frame_graph import FrameGraph, Keyframe, build_global_graph, build_local_window, keyframe_decision
from .geometry import InverseDepthMap, PinholeCamera, SE3Pose
from .trace import append_trace

log = logging.getLogger(__name__)


@dataclass
class KeyframeState:
    """Full-resolution depth and covariance of one keyframe, as handed to mapping."""

    keyframe_id: int
    frame_index: int
    pose: SE3Pose
    depth: np.ndarray
    covariance: np.ndarray


@dataclass
class TrackStep:
    frame_index: int
    pose: SE3Pose
    keyframe_id: Optional[int] = None
    mean_flow_px: float = 0.0
    ba_reports: List[Tuple[str, BAReport]] = field(default_factory=list)

    @property
    def is_keyframe(self) -> bool:
        return self.keyframe_id is not None


class Tracker:
    """Owns the frame graph and the flow provider; single-threaded."""

    def __init__(
        self,
        camera: PinholeCamera,
        config: TrackingConfig | None = None,
        provider: FlowProvider | None = None,
        seed: int = 0,
    ):
        self.config = config or TrackingConfig()
        self.camera = camera
        self.solver_camera = camera.downsampled(self.config.solver_downsample)
        self.provider = provider or create_flow_provider(
            self.config.flow_provider,
            camera=self.solver_camera,
            noise_px=self.config.flow_noise_px,
            seed=seed,
            pixel_scale=float(self.config.solver_downsample),
        )
        self.graph = FrameGraph()
        self._next_id = 0
        self._last_pose = SE3Pose.identity()
        # frame index -> (reference keyframe id, pose relative to it)
        self._anchors: Dict[int, Tuple[int, SE3Pose]] = {}
        self._timestamps: Dict[int, float] = {}

    # provider registration
    def _register(self, frame_index: int, pose_gt: SE3Pose | None, depth_gt: np.ndarray | None) -> None:
        if isinstance(self.provider, GroundTruthProvider):
            if pose_gt is None or depth_gt is None:
                raise DatasetError(f"frame {frame_index}: ground-truth flow needs a pose and a depth map")
            inv, valid = solver_inverse_depth(depth_gt, self.config.solver_downsample)
            self.provider.register(frame_index, pose_gt, inv, valid)
        else:
            self.provider.register(frame_index)

    # state accessors
    @property
    def keyframe_frames(self) -> Dict[int, int]:
        return {kf.id: kf.frame_index for kf in self.graph.keyframes()}

    def keyframe_state(self, kf_id: int) -> KeyframeState:
        kf = self.graph.get(kf_id)
        depth, cov = kf.depth.upsampled(self.camera.width, self.camera.height)
        return KeyframeState(kf.id, kf.frame_index, kf.pose, depth, cov)

    def frame_pose(self, frame_index: int) -> SE3Pose:
        kf_id, rel = self._anchors[frame_index]
        return self.graph.get(kf_id).pose.compose(rel)

    def trajectory(self) -> Tuple[List[float], List[SE3Pose]]:
        """Timestamps and current pose estimates of every tracked frame, in order."""
        order = sorted(self._anchors)
        return [self._timestamps[k] for k in order], [self.frame_pose(k) for k in order]

    # tracking
    def _new_keyframe(self, frame_index: int, timestamp: float, image: np.ndarray, pose: SE3Pose) -> Keyframe:
        cfg = self.config
        if len(self.graph):
            init = float(np.median(self.graph.latest().depth.values))
        else:
            init = cfg.initial_inv_depth
        values = np.full(self.solver_camera.shape, max(init, cfg.min_inv_depth))
        kf = Keyframe(self._next_id, image, pose, InverseDepthMap(values), frame_index, timestamp,
                      feature_handle=frame_index)
        self._next_id += 1
        self.graph.add_keyframe(kf)
        self._anchors[frame_index] = (kf.id, SE3Pose.identity())
        append_trace({"event": "keyframe_added", "keyframe": kf.id, "frame": frame_index})
        return kf

    def _motion_only(self, frame_index: int) -> Tuple[SE3Pose, float]:
        ref = self.graph.latest()
        p = edge_jacobians(self.solver_camera, ref.pose, self._last_pose, ref.depth.values,
                           jacobians=False)["p"].reshape(*self.solver_camera.shape, 2)
        rev = self.provider.flow_revision(ref, frame_index, p)
        return refine_pose(self.solver_camera, ref.pose, ref.depth.values, self._last_pose,
                           rev.targets(p), rev.confidence, self.config.frame_pose_iterations,
                           self.config.damping_init)

    def _flow_distance(self, a: int, b: int) -> float:
        try:
            return self.provider.mean_flow(self.graph.get(a), self.graph.get(b))
        except NoValidPixels:
            return float("inf")

    def local_ba(self) -> BAReport:
        cfg = self.config
        edges = build_local_window(self.graph, cfg.local_window_keyframes, cfg.local_radius_keyframes)
        report = ba_iterate(self.graph, edges, self.provider, self.solver_camera, cfg.local_ba_iterations, cfg)
        append_trace({"event": "local_ba", "keyframes": len(self.graph), "edges": len(edges),
                      "iterations": report.iterations, "cost": report.final_cost,
                      "converged": report.converged})
        return report

    def global_ba(self) -> BAReport:
        cfg = self.config
        edges = build_global_graph(self.graph, self._flow_distance, cfg.global_proximity_threshold_px)
        self.graph.set_edges(edges)
        report = ba_iterate(self.graph, edges, self.provider, self.solver_camera, cfg.global_ba_iterations, cfg)
        append_trace({"event": "global_ba", "keyframes": len(self.graph), "edges": len(edges),
                      "iterations": report.iterations, "cost": report.final_cost,
                      "converged": report.converged})
        log.info("global BA over %d keyframes, %d edges: cost %.3e", len(self.graph), len(edges), report.final_cost)
        return report

    def _global_due(self) -> bool:
        cfg = self.config
        n = len(self.graph)
        return n > cfg.local_window_keyframes and n % cfg.global_ba_period_keyframes == 0

    def track(
        self,
        frame_index: int,
        timestamp: float,
        image: np.ndarray,
        pose_gt: SE3Pose | None = None,
        depth_gt: np.ndarray | None = None,
    ) -> TrackStep:
        """Process one frame; frames must arrive in increasing index order."""
        if self._anchors and frame_index <= max(self._anchors):
            raise ValueError(f"frame {frame_index} arrived out of order")
        self._register(frame_index, pose_gt, depth_gt)
        self._timestamps[frame_index] = float(timestamp)

        if not len(self.graph):
            kf = self._new_keyframe(frame_index, timestamp, image, SE3Pose.identity())
            self._last_pose = kf.pose
            return TrackStep(frame_index, kf.pose, kf.id)

        ref = self.graph.latest()
        pose, cost = self._motion_only(frame_index)
        try:
            flow = self.provider.mean_flow(ref, frame_index)
        except NoValidPixels:
            log.warning("frame %d shares no valid pixels with keyframe %d", frame_index, ref.id)
            flow = 0.0
        step = TrackStep(frame_index, pose, mean_flow_px=flow)
        if keyframe_decision(flow, self.config.keyframe_flow_threshold_px):
            kf = self._new_keyframe(frame_index, timestamp, image, pose)
            step.keyframe_id = kf.id
            step.ba_reports.append(("local", self.local_ba()))
            if self._global_due():
                step.ba_reports.append(("global", self.global_ba()))
            step.pose = self.graph.get(kf.id).pose
        else:
            self._anchors[frame_index] = (ref.id, ref.pose.inverse().compose(pose))
        self._last_pose = step.pose
        append_trace({"event": "frame_tracked", "frame": frame_index, "keyframe": step.keyframe_id,
                      "mean_flow_px": flow, "cost": cost})
        return step

    def finish(self) -> Optional[BAReport]:
        """Final global BA over every keyframe."""
        if len(self.graph) < 2:
            return None
        return self.global_ba()
