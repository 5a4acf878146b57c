"""Mapping ablations on a synthetic scene with ground-truth poses.

Each protocol maps the same keyframes under different settings and scores
the held-out frames, so differences come from mapping alone:

* ``postproc``: PSNR / Depth-L1 after 0, 500, 1000 and 2000 post-processing steps.
* ``decay``: decayed position learning rate against three constant rates.
* ``depthloss``: covariance-weighted, raw and no depth loss under heteroscedastic depth noise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from .config import MappingConfig
from .dataset import Dataset
from .mapping import KeyframePacket, Mapper
from .metrics import EvalReport
from .pipeline import evaluate
from .synthetic import SceneSpec, depth_noise, generate_scene

log = logging.getLogger(__name__)

ABLATIONS = ("postproc", "decay", "depthloss")
POST_PROCESS_STEPS = (0, 500, 1000, 2000)
CONSTANT_POSITION_LRS = (1.6e-6, 5e-5, 1.6e-4)
DEPTH_LOSS_VARIANTS = ("weighted", "raw", "none")


@dataclass(frozen=True)
class AblationSettings:
    frames: int = 40
    keyframe_stride: int = 4
    eval_stride: int = 5
    iterations_per_keyframe: int = 60
    post_process_iterations: int = 500
    repeats: int = 1
    seed: int = 0
    noise_near: float = 0.005
    noise_far: float = 0.2
    # depth variance given to noiseless keyframes
    clean_depth_variance: float = 1.0


@dataclass
class KeyframeInputs:
    depth: np.ndarray
    covariance: np.ndarray


def synthetic_dataset(settings: AblationSettings) -> Dataset:
    return generate_scene(SceneSpec(frames=settings.frames), seed=settings.seed).to_dataset("ablation")


def keyframe_indices(dataset: Dataset, stride: int) -> List[int]:
    return list(range(0, len(dataset), stride))


def clean_inputs(dataset: Dataset, frames: List[int], variance: float = 1.0) -> Dict[int, KeyframeInputs]:
    """Ground-truth depth with a constant ``variance`` on every pixel."""
    if variance <= 0:
        raise ValueError("variance must be > 0")
    out = {}
    for k in frames:
        d = dataset[k].load_depth()
        out[k] = KeyframeInputs(d, np.full_like(d, variance))
    return out


def noisy_inputs(dataset: Dataset, frames: List[int], settings: AblationSettings, seed: int) -> Dict[int, KeyframeInputs]:
    rng = np.random.default_rng(seed)
    out = {}
    for k in frames:
        noisy, sigma = depth_noise(dataset[k].load_depth(), settings.noise_near, settings.noise_far, rng)
        out[k] = KeyframeInputs(noisy, sigma**2)
    return out


def map_keyframes(dataset: Dataset, inputs: Dict[int, KeyframeInputs], config: MappingConfig, seed: int) -> Mapper:
    """Feed keyframes in order with their ground-truth poses, one mapping cycle each."""
    mapper = Mapper(config, rng_seed=seed)
    for kf_id, k in enumerate(sorted(inputs)):
        frame = dataset[k]
        packet = KeyframePacket(kf_id, frame.load_image(), inputs[k].depth, inputs[k].covariance, frame.pose,
                                dataset.camera, frame_index=k)
        mapper.accept(packet)
        mapper.optimize_window()
    return mapper


def score(mapper: Mapper, dataset: Dataset, keyframes: List[int], settings: AblationSettings) -> EvalReport:
    poses = [f.pose for f in dataset]
    return evaluate(mapper.gaussians, poses, dataset, keyframes, settings.eval_stride, alignment="none",
                    workers=mapper.config.raster_workers)


def _row(report: EvalReport, **labels) -> dict:
    return {**labels, "psnr": report.mean_psnr, "ssim": report.mean_ssim, "depth_l1": report.mean_depth_l1}


def postproc_ablation(dataset: Dataset, base: MappingConfig, settings: AblationSettings, seed: int) -> List[dict]:
    frames = keyframe_indices(dataset, settings.keyframe_stride)
    mapper = map_keyframes(dataset, clean_inputs(dataset, frames, settings.clean_depth_variance), base, seed)
    rows, done = [], 0
    for k, beta in enumerate(POST_PROCESS_STEPS):
        if beta > done:
            mapper.post_process(beta - done, rng_seed=seed + k)
            done = beta
        rows.append(_row(score(mapper, dataset, frames, settings), post_process=beta))
    return rows


def decay_ablation(dataset: Dataset, base: MappingConfig, settings: AblationSettings, seed: int) -> List[dict]:
    frames = keyframe_indices(dataset, settings.keyframe_stride)
    inputs = clean_inputs(dataset, frames, settings.clean_depth_variance)
    schedules = {"decayed": (base.position_lr_init, base.position_lr_final)}
    schedules.update({f"constant_{lr:g}": (lr, lr) for lr in CONSTANT_POSITION_LRS})
    rows = []
    for name, (lr_init, lr_final) in schedules.items():
        cfg = replace(base, position_lr_init=lr_init, position_lr_final=lr_final)
        mapper = map_keyframes(dataset, inputs, cfg, seed)
        before = score(mapper, dataset, frames, settings)
        mapper.post_process(settings.post_process_iterations, rng_seed=seed)
        after = score(mapper, dataset, frames, settings)
        rows.append({**_row(before, schedule=name), "psnr_post": after.mean_psnr, "depth_l1_post": after.mean_depth_l1})
    return rows


def depthloss_ablation(dataset: Dataset, base: MappingConfig, settings: AblationSettings, seed: int) -> List[dict]:
    frames = keyframe_indices(dataset, settings.keyframe_stride)
    inputs = noisy_inputs(dataset, frames, settings, seed)
    rows = []
    for mode in DEPTH_LOSS_VARIANTS:
        mapper = map_keyframes(dataset, inputs, replace(base, depth_loss=mode), seed)
        rows.append(_row(score(mapper, dataset, frames, settings), depth_loss=mode))
    return rows


_PROTOCOLS: Dict[str, Callable[..., List[dict]]] = {
    "postproc": postproc_ablation,
    "decay": decay_ablation,
    "depthloss": depthloss_ablation,
}
_GROUP_BY = {"postproc": "post_process", "decay": "schedule", "depthloss": "depth_loss"}


def run_ablation(
    name: str,
    dataset: Optional[Dataset] = None,
    settings: AblationSettings | None = None,
    mapping: MappingConfig | None = None,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Per-seed rows and their mean over ``settings.repeats`` seeds."""
    if name not in _PROTOCOLS:
        raise ValueError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")
    settings = settings or AblationSettings()
    if settings.repeats < 1:
        raise ValueError("repeats must be >= 1")
    dataset = dataset or synthetic_dataset(settings)
    base = replace(mapping or MappingConfig(), iterations_per_keyframe=settings.iterations_per_keyframe,
                   post_process_iterations=settings.post_process_iterations)
    rows = []
    for r in range(settings.repeats):
        seed = settings.seed + r
        log.info("ablation %s: repeat %d/%d (seed %d)", name, r + 1, settings.repeats, seed)
        rows += [{**row, "seed": seed} for row in _PROTOCOLS[name](dataset, base, settings, seed)]
    per_seed = pd.DataFrame(rows)
    key = _GROUP_BY[name]
    summary = per_seed.drop(columns="seed").groupby(key, sort=False).mean().reset_index()
    return per_seed, summary
