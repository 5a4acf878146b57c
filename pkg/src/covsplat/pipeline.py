"""End-to-end run: tracking feeds keyframes to mapping, then post-processing and evaluation.

Tracking and mapping talk only through messages: a :class:`KeyframePacket`
for each new keyframe and a :class:`RefreshNotice` after every bundle
adjustment. Interleaved mode delivers them synchronously on one thread;
concurrent mode runs mapping on a worker thread behind a queue and keeps only
the newest pending keyframe.
"""
from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .checkpoint import CHECKPOINT_FILE, Checkpoint, save_checkpoint
from .config import RunConfig, config_hash, dump_config
from .dataset import Dataset, load_dataset
from .errors import DatasetError, TooFewPoses
from .geometry import PinholeCamera, SE3Pose
from .mapping import KeyframePacket, Mapper
from .metrics import Alignment, EvalReport, align_trajectory, ate_rmse, depth_l1, psnr, select_eval_frames, ssim
from .results import METRICS_FILE, TRAJECTORY_FILE, write_metrics, write_trajectory
from .splat.gaussians import GaussianSet
from .splat.rasterizer import rasterize
from .trace import append_trace
from .tracking import KeyframeState, Tracker

log = logging.getLogger(__name__)

CONFIG_FILE = "config.txt"


@dataclass
class RefreshNotice:
    states: Dict[int, KeyframeState] = field(default_factory=dict)


Message = Union[KeyframePacket, RefreshNotice, None]


@dataclass
class RunResult:
    timestamps: List[float]
    trajectory: List[SE3Pose]
    gaussians: GaussianSet
    report: EvalReport
    keyframe_frames: Dict[int, int]
    keyframe_poses: Dict[int, SE3Pose]
    camera: Optional[PinholeCamera] = None
    mapping_iterations: int = 0
    dropped_keyframes: int = 0


class MappingActor:
    """Applies messages to a :class:`Mapper` and runs one optimisation cycle per new keyframe."""

    def __init__(self, mapper: Mapper):
        self.mapper = mapper
        self.dropped = 0

    def cycle(self, messages: Sequence[Message]) -> None:
        refresh: Dict[int, KeyframeState] = {}
        packets: List[KeyframePacket] = []
        for msg in messages:
            if isinstance(msg, RefreshNotice):
                refresh.update(msg.states)
            elif isinstance(msg, KeyframePacket):
                packets.append(msg)
        for kf_id in sorted(refresh):
            s = refresh[kf_id]
            self.mapper.refresh(kf_id, s.pose, s.depth, s.covariance)
        if not packets:
            return
        if len(packets) > 1:
            self.dropped += len(packets) - 1
            log.debug("mapping busy: dropped keyframes %s", [p.keyframe_id for p in packets[:-1]])
        newest = packets[-1]
        if newest.keyframe_id in refresh:
            s = refresh[newest.keyframe_id]
            newest = KeyframePacket(newest.keyframe_id, newest.image, s.depth, s.covariance, s.pose,
                                    newest.camera, newest.frame_index, newest.version + 1)
        if self.mapper.accept(newest):
            self.mapper.optimize_window()


class _ConcurrentMapping:
    def __init__(self, actor: MappingActor):
        self.actor = actor
        self.queue: "queue.Queue[Message]" = queue.Queue()
        self.error: Optional[BaseException] = None
        self.thread = threading.Thread(target=self._loop, name="covsplat-mapping", daemon=True)

    def _loop(self) -> None:
        try:
            while True:
                batch = [self.queue.get()]
                while True:
                    try:
                        batch.append(self.queue.get_nowait())
                    except queue.Empty:
                        break
                self.actor.cycle([m for m in batch if m is not None])
                if any(m is None for m in batch):
                    return
        except BaseException as exc:  # re-raised on the tracking thread
            self.error = exc

    def send(self, msg: Message) -> None:
        if self.error is None:
            self.queue.put(msg)

    def close(self) -> None:
        self.queue.put(None)
        self.thread.join()
        if self.error is not None:
            raise self.error


def _packet(tracker: Tracker, state: KeyframeState, image: np.ndarray) -> KeyframePacket:
    return KeyframePacket(state.keyframe_id, image, state.depth, state.covariance, state.pose,
                          tracker.camera, state.frame_index)


def _refresh(tracker: Tracker, ids: Iterable[int]) -> RefreshNotice:
    return RefreshNotice({k: tracker.keyframe_state(k) for k in ids})


def _aligned_pose(fit: Alignment, pose_gt: SE3Pose) -> SE3Pose:
    """Ground-truth pose expressed in the map frame of the estimate."""
    Rt = fit.rotation.T
    return SE3Pose.from_rt(Rt @ pose_gt.R, Rt @ (pose_gt.t - fit.translation) / fit.scale)


def evaluate(
    gaussians: GaussianSet,
    trajectory: Sequence[SE3Pose],
    dataset: Dataset,
    keyframe_frames: Iterable[int],
    stride: int = 5,
    alignment: str = "sim3",
    workers: int = 1,
) -> EvalReport:
    """Render every ``stride``-th non-keyframe from its ground-truth pose and score it."""
    if len(trajectory) != len(dataset):
        raise ValueError("trajectory and dataset differ in length")
    frames = select_eval_frames(len(dataset), keyframe_frames, stride)
    with_gt = [k for k, f in enumerate(dataset) if f.pose is not None]
    report = EvalReport()
    fit = None
    try:
        est = [trajectory[k] for k in with_gt]
        gt = [dataset[k].pose for k in with_gt]
        fit = align_trajectory(est, gt, alignment)
        report.ate_rmse = ate_rmse(est, gt, alignment)
        report.depth_scale = fit.scale
    except TooFewPoses:
        log.warning("fewer than 3 ground-truth poses: rendering from estimated poses, no ATE")
    for k in frames:
        frame = dataset[k]
        pose = _aligned_pose(fit, frame.pose) if fit is not None and frame.pose is not None else trajectory[k]
        rendered = rasterize(gaussians, pose.inverse(), dataset.camera, workers=workers)
        image = frame.load_image()
        depth_gt = frame.load_depth()
        p, s = psnr(rendered.color, image), ssim(rendered.color, image)
        d = depth_l1(rendered.depth, depth_gt, scale=report.depth_scale) if depth_gt is not None else float("nan")
        report.add(k, p, s, d)
        append_trace({"event": "eval_frame", "frame": k, "psnr": p, "ssim": s, "depth_l1": d})
    return report


def run(config: RunConfig, dataset: Dataset | None = None) -> RunResult:
    """Track, map, post-process and evaluate one sequence."""
    if dataset is None:
        dataset = load_dataset(config.dataset, config.dataset_format)
    dataset = dataset.clipped(config.clip_start_frames, config.clip_max_frames)
    if len(dataset) == 0:
        raise DatasetError("dataset has no frames")
    tracker = Tracker(dataset.camera, config.tracking, seed=config.rng_seed)
    mapper = Mapper(config.mapping, rng_seed=config.rng_seed)
    actor = MappingActor(mapper)
    concurrent = _ConcurrentMapping(actor) if config.mode == "concurrent" else None
    if concurrent is not None:
        concurrent.thread.start()

    def deliver(messages: List[Message]) -> None:
        if concurrent is None:
            actor.cycle(messages)
        else:
            for m in messages:
                concurrent.send(m)

    window = config.tracking.local_window_keyframes
    try:
        for k, frame in enumerate(dataset):
            image = frame.load_image()
            step = tracker.track(k, frame.timestamp, image, frame.pose, frame.load_depth())
            if not step.is_keyframe:
                continue
            ids = tracker.graph.ids
            touched = ids if any(kind == "global" for kind, _ in step.ba_reports) else ids[-window:]
            notice = _refresh(tracker, [i for i in touched if i != step.keyframe_id])
            packet = _packet(tracker, tracker.keyframe_state(step.keyframe_id), image)
            deliver([notice, packet])
        final = tracker.finish()
        if final is not None:
            deliver([_refresh(tracker, tracker.graph.ids)])
    finally:
        if concurrent is not None:
            concurrent.close()

    post = mapper.post_process()
    timestamps, trajectory = tracker.trajectory()
    report = evaluate(mapper.gaussians, trajectory, dataset, tracker.keyframe_frames.values(),
                      config.eval_stride_frames, config.trajectory_alignment, config.mapping.raster_workers)
    summary = report.summary()
    append_trace({"event": "run_done", "frames": len(dataset), "keyframes": len(tracker.graph),
                  "gaussians": len(mapper.gaussians), "post_process": post.iterations, **summary})
    log.info("run done: %d frames, %d keyframes, %d Gaussians, PSNR %.2f dB, ATE %.4g",
             len(dataset), len(tracker.graph), len(mapper.gaussians), summary["psnr"], summary["ate_rmse"])
    return RunResult(
        timestamps=timestamps,
        trajectory=trajectory,
        gaussians=mapper.gaussians,
        report=report,
        keyframe_frames=tracker.keyframe_frames,
        keyframe_poses={kf.id: kf.pose for kf in tracker.graph.keyframes()},
        camera=dataset.camera,
        mapping_iterations=mapper.iteration,
        dropped_keyframes=actor.dropped,
    )


def write_run(out_dir: str | Path, result: RunResult, config: RunConfig) -> Path:
    """Trajectory, metrics, checkpoint and the effective config under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(out / TRAJECTORY_FILE, result.timestamps, result.trajectory)
    write_metrics(out / METRICS_FILE, result.report, {"keyframes": len(result.keyframe_frames)})
    save_checkpoint(out / CHECKPOINT_FILE, Checkpoint(
        gaussians=result.gaussians,
        camera=result.camera,
        iteration=result.mapping_iterations,
        config_hash=config_hash(config),
        rng_seed=config.rng_seed,
        keyframe_poses=result.keyframe_poses,
        keyframe_frames=result.keyframe_frames,
    ))
    (out / CONFIG_FILE).write_text(dump_config(config), encoding="utf-8")
    return out
