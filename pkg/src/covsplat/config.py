"""Run, tracking and mapping configuration.

Config files are flat ``key = value`` text with the unit in the key name
(``keyframe_flow_threshold_px = 4.0``). Keys are unique across the three
sections; a ``tracking.`` or ``mapping.`` prefix is accepted and ignored.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Tuple

from .errors import ConfigError


@dataclass
class TrackingConfig:
    keyframe_flow_threshold_px: float = 4.0
    local_window_keyframes: int = 16
    local_radius_keyframes: int = 3
    global_ba_period_keyframes: int = 10
    # 4x the keyframe threshold unless set explicitly
    global_proximity_threshold_px: float = 16.0
    solver_downsample: int = 8
    local_ba_iterations: int = 8
    global_ba_iterations: int = 8
    frame_pose_iterations: int = 6
    damping_init: float = 1e-4
    min_inv_depth: float = 1e-4
    scale_anchor_weight: float = 1.0
    cost_tolerance: float = 1e-10
    initial_inv_depth: float = 0.5
    flow_provider: str = "ground_truth"
    flow_noise_px: float = 0.0

    def __post_init__(self) -> None:
        if self.keyframe_flow_threshold_px <= 0 or self.global_proximity_threshold_px <= 0:
            raise ConfigError("flow thresholds must be positive")
        if self.local_window_keyframes < 2:
            raise ConfigError("local_window_keyframes must be >= 2")
        if self.global_ba_period_keyframes < 1 or self.local_radius_keyframes < 1:
            raise ConfigError("periods and radii must be >= 1")
        if self.solver_downsample < 1:
            raise ConfigError("solver_downsample must be >= 1")
        if min(self.local_ba_iterations, self.global_ba_iterations) < 1:
            raise ConfigError("BA iteration counts must be >= 1")
        if self.min_inv_depth <= 0 or self.initial_inv_depth <= 0:
            raise ConfigError("inverse depths must be positive")
        if self.flow_noise_px < 0:
            raise ConfigError("flow_noise_px must be >= 0")


@dataclass
class MappingConfig:
    downsample_factor: float = 0.8
    pyramid_levels: int = 3
    seed_stride_px: int = 128
    color_loss_weight: float = 0.5
    position_lr_init: float = 1.6e-4
    position_lr_final: float = 1.6e-6
    position_lr_decay_iters: int = 3000
    color_lr: float = 2.5e-3
    opacity_lr: float = 5e-2
    scale_lr: float = 5e-3
    rotation_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    window_keyframes: int = 8
    iterations_per_keyframe: int = 60
    densify_interval_iters: int = 150
    densify_grad_threshold: float = 2e-4
    split_extent_fraction: float = 0.01
    split_scale_divisor: float = 1.6
    prune_opacity: float = 0.1
    visibility_min_weight: float = 0.0
    post_process_iterations: int = 2000
    mask_threshold: float = 0.2
    mask_filter_px: int = 32
    depth_loss: str = "weighted"
    depth_eps: float = 1e-8
    depth_alpha_min: float = 0.5
    near_plane_units: float = 0.01
    raster_workers: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.downsample_factor < 1.0:
            raise ConfigError("downsample_factor must lie in (0, 1)")
        if self.pyramid_levels < 1:
            raise ConfigError("pyramid_levels must be >= 1")
        if not 0.0 < self.color_loss_weight <= 1.0:
            raise ConfigError("color_loss_weight must lie in (0, 1]")
        if self.position_lr_final > self.position_lr_init:
            raise ConfigError("position_lr_final must not exceed position_lr_init")
        if self.position_lr_final <= 0:
            raise ConfigError("learning rates must be positive")
        if self.position_lr_decay_iters <= 0:
            raise ConfigError("position_lr_decay_iters must be > 0")
        if self.seed_stride_px < 1 or self.window_keyframes < 1:
            raise ConfigError("seed_stride_px and window_keyframes must be >= 1")
        if self.densify_interval_iters < 1:
            raise ConfigError("densify_interval_iters must be >= 1")
        if self.post_process_iterations < 0 or self.iterations_per_keyframe < 0:
            raise ConfigError("iteration budgets must be >= 0")
        if self.depth_loss not in ("weighted", "raw", "none"):
            raise ConfigError(f"unknown depth_loss {self.depth_loss!r}")


@dataclass
class RunConfig:
    dataset: str = ""
    dataset_format: str = "synthetic"
    mode: str = "interleaved"
    rng_seed: int = 0
    eval_stride_frames: int = 5
    clip_start_frames: int = 0
    clip_max_frames: int = 0
    trajectory_alignment: str = "sim3"
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)

    def __post_init__(self) -> None:
        if self.mode not in ("interleaved", "concurrent"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.dataset_format not in ("synthetic", "tum"):
            raise ConfigError(f"unknown dataset_format {self.dataset_format!r}")
        if self.eval_stride_frames < 1:
            raise ConfigError("eval_stride_frames must be >= 1")
        if self.clip_start_frames < 0 or self.clip_max_frames < 0:
            raise ConfigError("clip values must be >= 0")
        if self.trajectory_alignment not in ("sim3", "se3", "none"):
            raise ConfigError(f"unknown trajectory_alignment {self.trajectory_alignment!r}")
        if self.rng_seed < 0:
            raise ConfigError("rng_seed must be >= 0")


_SECTIONS = ("tracking", "mapping")

# TUM-style real sequences get the long refinement budget unless set explicitly
TUM_POST_PROCESS_ITERATIONS = 26000


def _scalar_fields(cls) -> Dict[str, Any]:
    return {f.name: f for f in fields(cls) if f.name not in _SECTIONS}


def _coerce(raw: str, typ: Any, key: str, line_no: int | None) -> Any:
    name = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    try:
        if name == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if name == "int":
            return int(raw, 10)
        if name == "float":
            return float(raw)
        if name == "str":
            return raw.strip().strip('"').strip("'")
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {raw!r} as {name}", line_no) from None
    raise ConfigError(f"unsupported field type for {key}", line_no)


def _split_line(line: str, line_no: int) -> Tuple[str, str] | None:
    body = line.split("#", 1)[0].strip()
    if not body:
        return None
    if "=" not in body:
        raise ConfigError(f"expected 'key = value', got {body!r}", line_no)
    key, value = body.split("=", 1)
    key = key.strip()
    for sec in _SECTIONS:
        if key.startswith(sec + "."):
            key = key[len(sec) + 1:]
    if not key:
        raise ConfigError("empty key", line_no)
    return key, value.strip()


def apply_overrides(config: RunConfig, pairs: Iterable[Tuple[str, str, int | None]]) -> RunConfig:
    """Return a copy of ``config`` with ``(key, raw_value, line_no)`` overrides applied."""
    run_fields = _scalar_fields(RunConfig)
    trk_fields = _scalar_fields(TrackingConfig)
    map_fields = _scalar_fields(MappingConfig)
    run_kw: Dict[str, Any] = {}
    trk_kw: Dict[str, Any] = {}
    map_kw: Dict[str, Any] = {}
    for key, raw, line_no in pairs:
        if key in run_fields:
            run_kw[key] = _coerce(raw, run_fields[key].type, key, line_no)
        elif key in trk_fields:
            trk_kw[key] = _coerce(raw, trk_fields[key].type, key, line_no)
        elif key in map_fields:
            map_kw[key] = _coerce(raw, map_fields[key].type, key, line_no)
        else:
            raise ConfigError(f"unknown key {key!r}", line_no)
    if "global_proximity_threshold_px" not in trk_kw and "keyframe_flow_threshold_px" in trk_kw:
        trk_kw["global_proximity_threshold_px"] = 4.0 * trk_kw["keyframe_flow_threshold_px"]
    tracking = replace(config.tracking, **trk_kw)
    mapping = replace(config.mapping, **map_kw)
    out = replace(config, tracking=tracking, mapping=mapping, **run_kw)
    if out.dataset_format == "tum" and "post_process_iterations" not in map_kw \
            and config.mapping.post_process_iterations == MappingConfig.post_process_iterations:
        out = replace(out, mapping=replace(out.mapping, post_process_iterations=TUM_POST_PROCESS_ITERATIONS))
    return out


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    pairs: List[Tuple[str, str, int | None]] = []
    seen: Dict[str, int] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        kv = _split_line(line, line_no)
        if kv is None:
            continue
        if kv[0] in seen:
            raise ConfigError(f"duplicate key {kv[0]!r} (first on line {seen[kv[0]]})", line_no)
        seen[kv[0]] = line_no
        pairs.append((kv[0], kv[1], line_no))
    return apply_overrides(base or RunConfig(), pairs)


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), base=base)


def config_items(config: RunConfig) -> List[Tuple[str, Any]]:
    """Flat ``(key, value)`` pairs, sorted by key."""
    items: Dict[str, Any] = {}
    for name in _scalar_fields(RunConfig):
        items[name] = getattr(config, name)
    for sec in _SECTIONS:
        sub = getattr(config, sec)
        for f in fields(sub):
            items[f.name] = getattr(sub, f.name)
    return sorted(items.items())


def dump_config(config: RunConfig) -> str:
    return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n"
                   for k, v in config_items(config))


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(dump_config(config).encode("utf-8")).hexdigest()
