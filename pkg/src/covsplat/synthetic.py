"""Synthetic scenes with exact ground truth: a textured box in a room, or a Gaussian cloud.

Box scenes are ray-cast analytically, so their depth does not depend on the
rasterizer. Gaussian scenes are rendered with the splat rasterizer itself.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .dataset import Dataset, DatasetFrame, write_manifest
from .errors import InvalidSpec
from .geometry import PinholeCamera, SE3Pose, matrix_to_quat, pixel_grid
from .image_io import quantize_rgb, write_depth, write_rgb
from .splat.gaussians import GaussianSet, opacity_to_logit
from .splat.rasterizer import rasterize

log = logging.getLogger(__name__)

SCENE_KINDS = ("box", "gaussians")
TRAJECTORIES = ("orbit", "line", "loop")
DEPTH_SCALE = 5000.0
_WORLD_UP = np.array([0.0, 1.0, 0.0])
_TEXTURE_WAVES = 4


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "box"
    trajectory: str = "orbit"
    frames: int = 60
    radius: float = 2.0
    height: float = 0.5
    arc_degrees: float = 90.0
    line_length: float = 1.0
    box_half: float = 0.5
    room_half: float = 4.0      # 0 disables the enclosing room
    gaussian_count: int = 300
    frame_rate_hz: float = 30.0
    camera: PinholeCamera = field(default_factory=lambda: PinholeCamera(100.0, 100.0, 63.5, 47.5, 128, 96))

    def validate(self) -> None:
        if self.kind not in SCENE_KINDS:
            raise InvalidSpec(f"kind must be one of {SCENE_KINDS}, got {self.kind!r}")
        if self.trajectory not in TRAJECTORIES:
            raise InvalidSpec(f"trajectory must be one of {TRAJECTORIES}, got {self.trajectory!r}")
        if self.frames < 2:
            raise InvalidSpec("frames must be >= 2")
        if self.box_half <= 0 or self.radius <= 0 or self.frame_rate_hz <= 0:
            raise InvalidSpec("box_half, radius and frame_rate_hz must be positive")
        if self.kind == "gaussians" and self.gaussian_count < 1:
            raise InvalidSpec("gaussian_count must be >= 1")
        eye_dist = math.hypot(self.radius, self.height)
        if eye_dist <= self.box_half * math.sqrt(3.0):
            raise InvalidSpec("cameras would sit inside the box")
        if self.room_half and self.room_half <= eye_dist + 0.5 * self.line_length:
            raise InvalidSpec("room must enclose the trajectory")


@dataclass
class SyntheticScene:
    spec: SceneSpec
    seed: int
    camera: PinholeCamera
    timestamps: List[float]
    poses: List[SE3Pose]
    images: List[np.ndarray]
    depths: List[np.ndarray]
    gaussians: Optional[GaussianSet] = None
    texture: Optional["BoxTexture"] = None

    def __len__(self) -> int:
        return len(self.poses)

    def to_dataset(self, name: str = "synthetic") -> Dataset:
        frames = [
            DatasetFrame(ts, image=img, pose=pose, depth=d, depth_scale=DEPTH_SCALE)
            for ts, img, pose, d in zip(self.timestamps, self.images, self.poses, self.depths)
        ]
        return Dataset(name, self.camera, frames)


def look_at(eye: np.ndarray, target: np.ndarray) -> SE3Pose:
    """Camera-to-world pose at ``eye`` looking at ``target``, image y pointing down the world up-axis."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(-_WORLD_UP, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return SE3Pose.from_rt(np.stack([x, y, z], axis=1), eye)


def make_trajectory(spec: SceneSpec) -> List[SE3Pose]:
    n = spec.frames
    center = np.zeros(3)
    if spec.trajectory == "line":
        xs = np.linspace(-0.5 * spec.line_length, 0.5 * spec.line_length, n)
        return [look_at([x, spec.height, spec.radius], [x, 0.0, 0.0]) for x in xs]
    if spec.trajectory == "loop":
        angles = np.linspace(0.0, 2.0 * np.pi, n)
        angles[-1] = 0.0
    else:
        angles = np.linspace(0.0, np.deg2rad(spec.arc_degrees), n)
    return [look_at([spec.radius * np.sin(a), spec.height, spec.radius * np.cos(a)], center) for a in angles]


@dataclass(frozen=True)
class BoxTexture:
    """Smooth per-channel sinusoid sum over world position."""

    frequencies: np.ndarray  # (3, waves, 3)
    phases: np.ndarray       # (3, waves)
    base_box: np.ndarray     # (3,)
    base_room: np.ndarray    # (3,)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "BoxTexture":
        return cls(
            frequencies=rng.uniform(-6.0, 6.0, size=(3, _TEXTURE_WAVES, 3)),
            phases=rng.uniform(0.0, 2.0 * np.pi, size=(3, _TEXTURE_WAVES)),
            base_box=rng.uniform(0.45, 0.6, size=3),
            base_room=rng.uniform(0.3, 0.45, size=3),
        )

    def __call__(self, points: np.ndarray, on_box: np.ndarray) -> np.ndarray:
        waves = np.sin(np.einsum("...k,cwk->...cw", points, self.frequencies) + self.phases)
        base = np.where(on_box[..., None], self.base_box, self.base_room)
        return np.clip(base + 0.08 * waves.sum(axis=-1), 0.02, 0.98)


def _slabs(origin: np.ndarray, dirs: np.ndarray, half: float):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (-half - origin) * inv
        t1 = (half - origin) * inv
    return np.minimum(t0, t1).max(axis=-1), np.maximum(t0, t1).min(axis=-1)


def ray_cast_box(pose: SE3Pose, camera: PinholeCamera, box_half: float, room_half: float = 0.0):
    """Per-pixel z-depth, hit points and a box/room label for an axis-aligned box centred at the origin.

    Rays are ``R @ (x, y, 1)`` so the ray parameter equals camera-space z.
    Pixels that hit nothing get depth 0.
    """
    grid = pixel_grid(camera.width, camera.height)
    rays_c = np.stack([(grid[..., 0] - camera.cx) / camera.fx, (grid[..., 1] - camera.cy) / camera.fy,
                       np.ones(camera.shape)], axis=-1)
    dirs = rays_c @ pose.R.T
    origin = pose.t
    t_in, t_out = _slabs(origin, dirs, box_half)
    hit_box = (t_in <= t_out) & (t_in > 0)
    depth = np.where(hit_box, t_in, 0.0)
    on_box = hit_box.copy()
    if room_half > 0:
        _, t_wall = _slabs(origin, dirs, room_half)
        wall = ~hit_box & (t_wall > 0)
        depth = np.where(wall, t_wall, depth)
    points = origin + dirs * depth[..., None]
    return depth, points, on_box


def surface_gaussians(texture: BoxTexture, box_half: float, count: int, rng: np.random.Generator) -> GaussianSet:
    """Flat, opaque Gaussians tiling the box faces; an approximation of the analytic box."""
    per_face = max(count // 6, 1)
    side = max(int(math.ceil(math.sqrt(per_face))), 1)
    ticks = (np.arange(side) + 0.5) / side * 2.0 * box_half - box_half
    a, b = np.meshgrid(ticks, ticks, indexing="ij")
    a, b = a.ravel(), b.ravel()
    spacing = 2.0 * box_half / side
    positions, rotations = [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            p = np.zeros((len(a), 3))
            others = [k for k in range(3) if k != axis]
            p[:, axis] = sign * box_half
            p[:, others[0]] = a
            p[:, others[1]] = b
            positions.append(p)
            # local z onto the face normal
            n_axis = np.zeros(3)
            n_axis[axis] = sign
            t_axis = np.zeros(3)
            t_axis[others[0]] = 1.0
            R = np.stack([t_axis, np.cross(n_axis, t_axis), n_axis], axis=1)
            rotations.append(np.tile(matrix_to_quat(R), (len(a), 1)))
    positions = np.concatenate(positions)
    positions += rng.normal(scale=1e-4 * box_half, size=positions.shape)
    n = len(positions)
    log_scales = np.tile(np.log([0.7 * spacing, 0.7 * spacing, 1e-3 * box_half]), (n, 1))
    colors = texture(positions, np.ones(n, dtype=bool))
    return GaussianSet(positions, np.concatenate(rotations), log_scales,
                       np.full(n, float(opacity_to_logit(0.98))), colors)


def random_gaussians(spec: SceneSpec, rng: np.random.Generator) -> GaussianSet:
    n = spec.gaussian_count
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianSet(
        positions=rng.uniform(-spec.box_half, spec.box_half, size=(n, 3)),
        rotations=q,
        log_scales=np.log(spec.box_half * rng.uniform(0.06, 0.2, size=(n, 3))),
        opacity_logits=np.full(n, float(opacity_to_logit(0.8))),
        colors=rng.uniform(0.1, 0.9, size=(n, 3)),
    )


def _quantize_depth(depth: np.ndarray) -> np.ndarray:
    return np.round(depth * DEPTH_SCALE) / DEPTH_SCALE


def generate_scene(spec: SceneSpec | None = None, seed: int = 0) -> SyntheticScene:
    """Deterministic in ``(spec, seed)``."""
    spec = spec or SceneSpec()
    spec.validate()
    rng = np.random.default_rng(seed)
    poses = make_trajectory(spec)
    timestamps = [k / spec.frame_rate_hz for k in range(spec.frames)]
    images, depths = [], []
    texture = gaussians = None
    if spec.kind == "box":
        texture = BoxTexture.random(rng)
        for pose in poses:
            depth, points, on_box = ray_cast_box(pose, spec.camera, spec.box_half, spec.room_half)
            color = texture(points, on_box) * (depth > 0)[..., None]
            images.append(quantize_rgb(color))
            depths.append(_quantize_depth(depth))
    else:
        gaussians = random_gaussians(spec, rng)
        for pose in poses:
            r = rasterize(gaussians, pose.inverse(), spec.camera)
            ok = r.alpha_acc > 0.5
            depth = np.where(ok, r.depth / np.where(ok, r.alpha_acc, 1.0), 0.0)
            images.append(quantize_rgb(r.color))
            depths.append(_quantize_depth(depth))
    log.info("generated %s/%s scene: %d frames, seed %d", spec.kind, spec.trajectory, spec.frames, seed)
    return SyntheticScene(spec, seed, spec.camera, timestamps, poses, images, depths, gaussians, texture)


def save_scene(scene: SyntheticScene, out_dir: str | Path) -> Path:
    """Write ``rgb/*.png``, ``depth/*.png`` and the manifest; returns the manifest path."""
    root = Path(out_dir)
    records = []
    for k, (ts, img, depth, pose) in enumerate(zip(scene.timestamps, scene.images, scene.depths, scene.poses)):
        rgb_rel, depth_rel = f"rgb/{k:06d}.png", f"depth/{k:06d}.png"
        write_rgb(root / rgb_rel, img)
        write_depth(root / depth_rel, depth, DEPTH_SCALE)
        records.append((ts, rgb_rel, depth_rel, pose))
    return write_manifest(root, scene.camera, DEPTH_SCALE, records)


def depth_noise(
    depth: np.ndarray, sigma_near: float, sigma_far: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Heteroscedastic noise whose standard deviation grows linearly with depth.

    Returns ``(noisy_depth, sigma)``; invalid pixels stay 0 and get sigma 0.
    """
    d = np.asarray(depth, dtype=float)
    valid = d > 0
    lo, hi = (float(d[valid].min()), float(d[valid].max())) if valid.any() else (0.0, 1.0)
    frac = np.clip((d - lo) / max(hi - lo, 1e-9), 0.0, 1.0)
    sigma = np.where(valid, sigma_near + (sigma_far - sigma_near) * frac, 0.0)
    noisy = np.where(valid, np.maximum(d + sigma * rng.standard_normal(d.shape), 1e-3), 0.0)
    return noisy, sigma
