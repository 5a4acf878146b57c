"""Gaussian parameter storage and the ``IGS1`` point-cloud file format."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator

import numpy as np
from scipy.special import expit, logit

# per-record layout: position(3) rotation wxyz(4) log_scale(3) opacity_logit(1) color(3)
RECORD_FLOATS = 14
_MAGIC = "IGS1"
_DTYPE = np.dtype("<f4")

PARAM_GROUPS = ("positions", "rotations", "log_scales", "opacity_logits", "colors")


@dataclass
class Gaussian3D:
    position: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    log_scale: np.ndarray = field(default_factory=lambda: np.full(3, np.log(0.01)))
    opacity_logit: float = 0.0
    color: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))

    @property
    def opacity(self) -> float:
        return float(expit(self.opacity_logit))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """``(N, 4)`` scalar-first quaternions (any norm) to ``(N, 3, 3)`` rotations."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


class GaussianSet:
    """Struct-of-arrays container; every Gaussian keeps a stable integer id."""

    def __init__(
        self,
        positions: np.ndarray | None = None,
        rotations: np.ndarray | None = None,
        log_scales: np.ndarray | None = None,
        opacity_logits: np.ndarray | None = None,
        colors: np.ndarray | None = None,
        ids: np.ndarray | None = None,
        seed_keyframe: np.ndarray | None = None,
        next_id: int | None = None,
    ):
        self.positions = np.zeros((0, 3)) if positions is None else np.asarray(positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        self.rotations = (np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)) if rotations is None
                          else np.asarray(rotations, dtype=float).reshape(-1, 4))
        self.log_scales = (np.full((n, 3), np.log(0.01)) if log_scales is None
                           else np.asarray(log_scales, dtype=float).reshape(-1, 3))
        self.opacity_logits = (np.zeros(n) if opacity_logits is None
                               else np.asarray(opacity_logits, dtype=float).reshape(-1))
        self.colors = np.full((n, 3), 0.5) if colors is None else np.asarray(colors, dtype=float).reshape(-1, 3)
        self.ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64).reshape(-1)
        self.seed_keyframe = (np.full(n, -1, dtype=np.int64) if seed_keyframe is None
                              else np.asarray(seed_keyframe, dtype=np.int64).reshape(-1))
        self.next_id = int(self.ids.max()) + 1 if next_id is None and n else (next_id or 0)
        for name in PARAM_GROUPS + ("ids", "seed_keyframe"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} rows, expected {n}")

    @classmethod
    def from_gaussians(cls, items: list[Gaussian3D]) -> "GaussianSet":
        if not items:
            return cls()
        return cls(
            positions=np.stack([g.position for g in items]),
            rotations=np.stack([g.rotation for g in items]),
            log_scales=np.stack([g.log_scale for g in items]),
            opacity_logits=np.array([g.opacity_logit for g in items]),
            colors=np.stack([g.color for g in items]),
        )

    def __len__(self) -> int:
        return len(self.positions)

    def __iter__(self) -> Iterator[Gaussian3D]:
        for k in range(len(self)):
            yield self[k]

    def __getitem__(self, k: int) -> Gaussian3D:
        return Gaussian3D(
            self.positions[k].copy(), self.rotations[k].copy(), self.log_scales[k].copy(),
            float(self.opacity_logits[k]), self.colors[k].copy(),
        )

    @property
    def opacities(self) -> np.ndarray:
        return expit(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def rotation_matrices(self) -> np.ndarray:
        return quat_to_rotmat(self.rotations)

    def covariances(self) -> np.ndarray:
        R = self.rotation_matrices()
        s2 = self.scales**2
        return np.einsum("nij,nj,nkj->nik", R, s2, R)

    def params(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_GROUPS}

    def copy(self) -> "GaussianSet":
        return GaussianSet(
            self.positions.copy(), self.rotations.copy(), self.log_scales.copy(),
            self.opacity_logits.copy(), self.colors.copy(), self.ids.copy(),
            self.seed_keyframe.copy(), self.next_id,
        )

    def subset(self, keep: np.ndarray) -> "GaussianSet":
        keep = np.asarray(keep)
        return GaussianSet(
            self.positions[keep], self.rotations[keep], self.log_scales[keep],
            self.opacity_logits[keep], self.colors[keep], self.ids[keep],
            self.seed_keyframe[keep], self.next_id,
        )

    def append(
        self,
        positions: np.ndarray,
        rotations: np.ndarray,
        log_scales: np.ndarray,
        opacity_logits: np.ndarray,
        colors: np.ndarray,
        seed_keyframe: np.ndarray | int = -1,
    ) -> np.ndarray:
        """Add Gaussians with fresh ids; returns the new ids."""
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        n = len(positions)
        new_ids = np.arange(self.next_id, self.next_id + n, dtype=np.int64)
        self.next_id += n
        self.positions = np.concatenate([self.positions, positions])
        self.rotations = np.concatenate([self.rotations, np.asarray(rotations, dtype=float).reshape(-1, 4)])
        self.log_scales = np.concatenate([self.log_scales, np.asarray(log_scales, dtype=float).reshape(-1, 3)])
        self.opacity_logits = np.concatenate([self.opacity_logits, np.asarray(opacity_logits, dtype=float).reshape(-1)])
        self.colors = np.concatenate([self.colors, np.asarray(colors, dtype=float).reshape(-1, 3)])
        self.ids = np.concatenate([self.ids, new_ids])
        seeds = np.broadcast_to(np.asarray(seed_keyframe, dtype=np.int64), (n,))
        self.seed_keyframe = np.concatenate([self.seed_keyframe, seeds])
        return new_ids

    def equals(self, other: "GaussianSet") -> bool:
        return len(self) == len(other) and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in PARAM_GROUPS + ("ids",)
        )


def save_gaussians(path: str | Path, gaussians: GaussianSet) -> None:
    rec = np.concatenate([
        gaussians.positions,
        gaussians.rotations,
        gaussians.log_scales,
        gaussians.opacity_logits[:, None],
        gaussians.colors,
    ], axis=1).astype(_DTYPE)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("wb") as fh:
        fh.write(f"{_MAGIC} {len(gaussians)}\n".encode("ascii"))
        fh.write(rec.tobytes())


def load_gaussians(path: str | Path) -> GaussianSet:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    header = raw[:nl].decode("ascii", errors="replace").split() if nl >= 0 else []
    if len(header) != 2 or header[0] != _MAGIC:
        raise ValueError(f"{path}: not an {_MAGIC} file")
    count = int(header[1])
    body = np.frombuffer(raw[nl + 1:], dtype=_DTYPE)
    if body.size != count * RECORD_FLOATS:
        raise ValueError(f"{path}: expected {count} records, found {body.size / RECORD_FLOATS:g}")
    rec = body.reshape(count, RECORD_FLOATS).astype(float)
    return GaussianSet(
        positions=rec[:, 0:3],
        rotations=rec[:, 3:7],
        log_scales=rec[:, 7:10],
        opacity_logits=rec[:, 10],
        colors=rec[:, 11:14],
    )


def opacity_to_logit(opacity: float | np.ndarray) -> np.ndarray:
    return logit(np.clip(opacity, 1e-6, 1 - 1e-6))
