"""Shared fixtures for the test suite: small cameras, random scenes and reference implementations."""
from __future__ import annotations

import os
from pathlib import Path
from typing import List, Sequence

import numpy as np

# keep the JSONL trace out of the working tree while testing
os.environ.setdefault("COVSPLAT_TRACE", "0")

from covsplat.geometry import PinholeCamera, SE3Pose, se3_exp
from covsplat.splat.gaussians import GaussianSet
from covsplat.splat.projection import project_gaussians
from covsplat.synthetic import SceneSpec

SLOW = os.environ.get("COVSPLAT_SLOW_TESTS", "").strip() == "1"


def small_camera(width: int = 32, height: int = 24, focal: float = 30.0) -> PinholeCamera:
    return PinholeCamera(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def tiny_spec(frames: int = 12, trajectory: str = "orbit", kind: str = "box") -> SceneSpec:
    """A 64x48 box scene that keeps end-to-end tests fast."""
    return SceneSpec(kind=kind, trajectory=trajectory, frames=frames,
                     camera=PinholeCamera(50.0, 50.0, 31.5, 23.5, 64, 48))


def random_gaussians(rng: np.random.Generator, n: int, depth=(2.0, 5.0), spread: float = 0.8,
                     scale=(0.03, 0.25)) -> GaussianSet:
    """Gaussians in front of an identity camera looking down +z."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    z = rng.uniform(*depth, size=n)
    xy = rng.uniform(-spread, spread, size=(n, 2)) * z[:, None] * 0.5
    return GaussianSet(
        positions=np.column_stack([xy, z]),
        rotations=q,
        log_scales=np.log(rng.uniform(*scale, size=(n, 3))),
        opacity_logits=rng.uniform(-2.0, 3.0, size=n),
        colors=rng.uniform(0.0, 1.0, size=(n, 3)),
    )


def perturb(pose: SE3Pose, rng: np.random.Generator, rot_deg: float = 1.0, trans: float = 0.01) -> SE3Pose:
    omega = rng.normal(size=3)
    omega *= np.deg2rad(rot_deg) / np.linalg.norm(omega)
    v = rng.normal(size=3)
    v *= trans / np.linalg.norm(v)
    return se3_exp(np.concatenate([v, omega])).compose(pose)


def naive_rasterize(gaussians: GaussianSet, T_cw: SE3Pose, camera: PinholeCamera):
    """Full-sort reference compositor with no tiling: ``(color, depth, alpha_acc)``."""
    batch = project_gaussians(gaussians, T_cw, camera)
    H, W = camera.height, camera.width
    v, u = np.meshgrid(np.arange(H, dtype=float), np.arange(W, dtype=float), indexing="ij")
    color = np.zeros((H, W, 3))
    depth = np.zeros((H, W))
    acc = np.zeros((H, W))
    T = np.ones((H, W))
    alive = np.ones((H, W), dtype=bool)
    for k in np.lexsort((batch.ids, batch.depth)):
        dx = u - batch.mean2d[k, 0]
        dy = v - batch.mean2d[k, 1]
        q = batch.conic[k]
        g = np.exp(-0.5 * (q[0, 0] * dx * dx + 2.0 * q[0, 1] * dx * dy + q[1, 1] * dy * dy))
        alpha = np.minimum(batch.opacity[k] * g, 0.99)
        alpha[alpha < 1e-10] = 0.0
        T_next = T * (1.0 - alpha)
        alive &= T_next >= 1e-4
        w = np.where(alive, alpha * T, 0.0)
        color += w[..., None] * batch.color[k]
        depth += w * batch.depth[k]
        acc += w
        T = T_next
    return color, depth, acc


def mask_oracle(sigma: np.ndarray, threshold: float, kernel: int) -> np.ndarray:
    """Loop-based max filter, threshold and majority vote with edge replication."""
    s = np.asarray(sigma, dtype=float)
    lo, hi = s.min(), s.max()
    norm = np.zeros_like(s) if hi == lo else (s - lo) / (hi - lo)
    before = kernel // 2
    after = kernel - 1 - before
    padded = np.pad(norm, ((before, after), (before, after)), mode="edge")
    H, W = s.shape
    widened = np.empty_like(s)
    for y in range(H):
        for x in range(W):
            widened[y, x] = padded[y:y + kernel, x:x + kernel].max()
    certain = (widened < threshold).astype(float)
    padded = np.pad(certain, ((before, after), (before, after)), mode="edge")
    out = np.empty(s.shape, dtype=bool)
    for y in range(H):
        for x in range(W):
            out[y, x] = padded[y:y + kernel, x:x + kernel].mean() > 0.5
    return out


def write_tum_fixture(root: Path, rgb: Sequence[tuple], depth: Sequence[tuple] = (),
                      groundtruth: Sequence[str] = ()) -> Path:
    """Minimal TUM layout; image files are written as 4x3 PNGs."""
    from covsplat.image_io import write_depth, write_rgb

    root.mkdir(parents=True, exist_ok=True)
    lines: List[str] = ["# timestamp filename"]
    for ts, name in rgb:
        write_rgb(root / name, np.full((3, 4, 3), 0.5))
        lines.append(f"{ts} {name}")
    (root / "rgb.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if depth:
        lines = ["# timestamp filename"]
        for ts, name in depth:
            write_depth(root / name, np.full((3, 4), 1.5), 5000.0)
            lines.append(f"{ts} {name}")
        (root / "depth.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if groundtruth:
        (root / "groundtruth.txt").write_text(
            "# timestamp tx ty tz qx qy qz qw\n" + "\n".join(groundtruth) + "\n", encoding="utf-8")
    return root
