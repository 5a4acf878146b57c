"""Rigid poses, the pinhole camera and dense reprojection.

Poses are camera-to-world: ``X_w = R @ X_c + t``. Tangent vectors are
``xi = (v, omega)`` and updates are applied on the left, ``G <- exp(xi) * G``.
Quaternions are stored scalar-first ``(w, x, y, z)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Tuple

import cv2
import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NonPositiveDepth, NonPositiveInverseDepth

_SMALL_ANGLE = 1e-8


def skew(w: np.ndarray) -> np.ndarray:
    wx, wy, wz = np.asarray(w, dtype=float).ravel()
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    return -q if q[0] < 0 else q


def _left_jacobian(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + W @ W / 6.0
    a = (1.0 - np.cos(theta)) / theta**2
    b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * W + b * W @ W


@dataclass(frozen=True, eq=False)
class SE3Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("pose quaternion must be finite and nonzero")
        q = q / n
        if q[0] < 0:
            q = -q
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3).copy())

    @classmethod
    def identity(cls) -> "SE3Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "SE3Pose":
        T = np.asarray(T, dtype=float)
        return cls(matrix_to_quat(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rt(cls, R: np.ndarray, t: np.ndarray) -> "SE3Pose":
        return cls(matrix_to_quat(R), t)

    @cached_property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        """``self * other``: apply ``other`` first."""
        return SE3Pose.from_rt(self.R @ other.R, self.R @ other.t + self.t)

    __mul__ = compose

    def inverse(self) -> "SE3Pose":
        Rt = self.R.T
        return SE3Pose.from_rt(Rt, -Rt @ self.t)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to ``(..., 3)`` points."""
        return np.asarray(points, dtype=float) @ self.R.T + self.t

    def retract(self, xi: np.ndarray) -> "SE3Pose":
        return se3_exp(xi).compose(self)

    def rotation_angle_to(self, other: "SE3Pose") -> float:
        return float(np.linalg.norm(Rotation.from_matrix(self.R.T @ other.R).as_rotvec()))

    def __repr__(self) -> str:
        q = np.round(self.rotation, 6).tolist()
        t = np.round(self.translation, 6).tolist()
        return f"SE3Pose(q={q}, t={t})"


def se3_exp(xi: np.ndarray) -> SE3Pose:
    xi = np.asarray(xi, dtype=float).reshape(6)
    v, omega = xi[:3], xi[3:]
    R = Rotation.from_rotvec(omega).as_matrix()
    return SE3Pose.from_rt(R, _left_jacobian(omega) @ v)


def se3_log(pose: SE3Pose) -> np.ndarray:
    omega = Rotation.from_matrix(pose.R).as_rotvec()
    v = np.linalg.solve(_left_jacobian(omega), pose.t)
    return np.concatenate([v, omega])


def relative_pose(G_i: SE3Pose, G_j: SE3Pose) -> SE3Pose:
    """``G_ij = G_j^-1 * G_i``, mapping camera-i points into camera j."""
    return G_j.inverse().compose(G_i)


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def resized(self, width: int, height: int) -> "PinholeCamera":
        """Intrinsics for an image resampled to ``width`` x ``height`` (pixel-center aligned)."""
        sx = width / self.width
        sy = height / self.height
        return PinholeCamera(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=(self.cx + 0.5) * sx - 0.5,
            cy=(self.cy + 0.5) * sy - 0.5,
            width=int(width),
            height=int(height),
        )

    def downsampled(self, factor: int) -> "PinholeCamera":
        return self.resized(self.width // factor, self.height // factor)

    def to_tuple(self) -> Tuple[float, float, float, float, int, int]:
        return (self.fx, self.fy, self.cx, self.cy, self.width, self.height)


@dataclass
class InverseDepthMap:
    values: np.ndarray
    covariance: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.covariance is None:
            self.covariance = np.zeros_like(self.values)
        self.covariance = np.asarray(self.covariance, dtype=float)
        if self.values.shape != self.covariance.shape:
            raise ValueError("inverse depth and covariance grids differ in shape")
        if not np.all(self.values > 0):
            raise NonPositiveInverseDepth("inverse depth values must be > 0")
        if np.any(self.covariance < 0):
            raise ValueError("covariance values must be >= 0")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def copy(self) -> "InverseDepthMap":
        return InverseDepthMap(self.values.copy(), self.covariance.copy())

    def upsampled(self, width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
        """Bilinear ``(depth, covariance)`` at ``width`` x ``height``; depth in scene units."""
        inv = resize_grid(self.values, width, height)
        cov = resize_grid(self.covariance, width, height)
        return 1.0 / inv, np.maximum(cov, 0.0)


def resize_grid(grid: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resample of a float grid (2-D or H x W x C)."""
    src = np.ascontiguousarray(grid, dtype=np.float64)
    if src.shape[1] == width and src.shape[0] == height:
        return src.copy()
    return cv2.resize(src, (int(width), int(height)), interpolation=cv2.INTER_LINEAR)


def project(camera: PinholeCamera, point_cam: np.ndarray) -> np.ndarray:
    x, y, z = np.asarray(point_cam, dtype=float).reshape(3)
    if z <= 0:
        raise NonPositiveDepth(f"point has camera z = {z}")
    return np.array([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy])


def unproject(camera: PinholeCamera, pixel: np.ndarray, inv_depth: float) -> np.ndarray:
    if inv_depth <= 0:
        raise NonPositiveInverseDepth(f"inverse depth {inv_depth} is not positive")
    u, v = np.asarray(pixel, dtype=float).reshape(2)
    ray = np.array([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0])
    return ray / inv_depth


def pixel_grid(width: int, height: int) -> np.ndarray:
    """``(H, W, 2)`` grid of ``(u, v)`` pixel coordinates."""
    v, u = np.meshgrid(np.arange(height, dtype=float), np.arange(width, dtype=float), indexing="ij")
    return np.stack([u, v], axis=-1)


def project_points(camera: PinholeCamera, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised projection of ``(..., 3)`` camera points; returns ``(uv, z > 0)``."""
    pts = np.asarray(points, dtype=float)
    z = pts[..., 2]
    valid = z > 0
    zs = np.where(valid, z, 1.0)
    uv = np.stack([camera.fx * pts[..., 0] / zs + camera.cx, camera.fy * pts[..., 1] / zs + camera.cy], axis=-1)
    return uv, valid


def unproject_grid(camera: PinholeCamera, inv_depth: np.ndarray) -> np.ndarray:
    """``(H, W, 3)`` camera-frame points for a full inverse-depth grid."""
    d = np.asarray(inv_depth, dtype=float)
    grid = pixel_grid(d.shape[1], d.shape[0])
    rays = np.stack([
        (grid[..., 0] - camera.cx) / camera.fx,
        (grid[..., 1] - camera.cy) / camera.fy,
        np.ones(d.shape),
    ], axis=-1)
    return rays / d[..., None]


def reproject_field(
    G_i: SE3Pose, G_j: SE3Pose, camera: PinholeCamera, depth_i: InverseDepthMap | np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates in frame j of every pixel of frame i.

    Returns ``(coords, valid)``; ``valid`` is false where the transformed point
    has ``z <= 0``.
    """
    d = depth_i.values if isinstance(depth_i, InverseDepthMap) else np.asarray(depth_i, dtype=float)
    if d.shape != camera.shape:
        raise ValueError(f"depth grid {d.shape} does not match camera {camera.shape}")
    if G_i is G_j or (np.array_equal(G_i.rotation, G_j.rotation) and np.array_equal(G_i.t, G_j.t)):
        return pixel_grid(camera.width, camera.height), np.ones(d.shape, dtype=bool)
    X_i = unproject_grid(camera, d)
    X_j = relative_pose(G_i, G_j).transform(X_i)
    return project_points(camera, X_j)
