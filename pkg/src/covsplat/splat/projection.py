"""EWA projection of 3D Gaussians to image-plane footprints."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import expit

from ..geometry import PinholeCamera, SE3Pose
from .gaussians import Gaussian3D, GaussianSet, quat_to_rotmat

NEAR = 0.01
LOW_PASS = 0.3
CULL_SIGMAS = 3.0


@dataclass
class ProjectedGaussian:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    opacity: float
    color: np.ndarray


class Culled:
    """Marker returned for a Gaussian outside the view."""

    def __repr__(self) -> str:
        return "Culled"


CULLED = Culled()


@dataclass
class ProjectedBatch:
    """Projected footprints of the visible subset plus intermediates for the backward pass."""

    index: np.ndarray      # rows of the source GaussianSet
    ids: np.ndarray
    mean2d: np.ndarray     # (n, 2)
    cov2d: np.ndarray      # (n, 2, 2), low-pass included
    conic: np.ndarray      # (n, 2, 2), inverse of cov2d
    depth: np.ndarray      # (n,)
    opacity: np.ndarray    # (n,)
    color: np.ndarray      # (n, 3)
    t_cam: np.ndarray      # (n, 3)
    J: np.ndarray          # (n, 2, 3)
    M: np.ndarray          # (n, 2, 3) = J @ R_cw
    cov3d: np.ndarray      # (n, 3, 3)
    R: np.ndarray          # (n, 3, 3) Gaussian rotations
    scales: np.ndarray     # (n, 3)
    R_cw: np.ndarray       # (3, 3)

    def __len__(self) -> int:
        return len(self.index)

    def max_eigenvalue(self) -> np.ndarray:
        a, b, c = self.cov2d[:, 0, 0], self.cov2d[:, 0, 1], self.cov2d[:, 1, 1]
        mid = 0.5 * (a + c)
        return mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))


def projection_jacobian(camera: PinholeCamera, t: np.ndarray) -> np.ndarray:
    x, y, z = t[..., 0], t[..., 1], t[..., 2]
    J = np.zeros(t.shape[:-1] + (2, 3))
    J[..., 0, 0] = camera.fx / z
    J[..., 0, 2] = -camera.fx * x / z**2
    J[..., 1, 1] = camera.fy / z
    J[..., 1, 2] = -camera.fy * y / z**2
    return J


def project_gaussians(
    gaussians: GaussianSet, T_cw: SE3Pose, camera: PinholeCamera, near: float = NEAR
) -> ProjectedBatch:
    """Project every Gaussian; culled ones are absent from the batch."""
    R_cw, t_cw = T_cw.R, T_cw.t
    t_all = gaussians.positions @ R_cw.T + t_cw
    keep = np.nonzero(t_all[:, 2] > near)[0]
    t = t_all[keep]
    R = quat_to_rotmat(gaussians.rotations[keep])
    s = np.exp(gaussians.log_scales[keep])
    cov3d = np.einsum("nij,nj,nkj->nik", R, s * s, R)
    J = projection_jacobian(camera, t)
    M = J @ R_cw
    cov2d = M @ cov3d @ np.transpose(M, (0, 2, 1)) + LOW_PASS * np.eye(2)
    z = t[:, 2]
    mean2d = np.stack([camera.fx * t[:, 0] / z + camera.cx, camera.fy * t[:, 1] / z + camera.cy], axis=-1)

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    sigma = np.sqrt(mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0)))
    margin = CULL_SIGMAS * sigma
    inside = (
        (mean2d[:, 0] >= -0.5 - margin) & (mean2d[:, 0] <= camera.width - 0.5 + margin)
        & (mean2d[:, 1] >= -0.5 - margin) & (mean2d[:, 1] <= camera.height - 0.5 + margin)
    )
    sel = np.nonzero(inside)[0]
    det = (a * c - b * b)[sel]
    conic = np.empty((len(sel), 2, 2))
    conic[:, 0, 0] = c[sel] / det
    conic[:, 1, 1] = a[sel] / det
    conic[:, 0, 1] = conic[:, 1, 0] = -b[sel] / det
    idx = keep[sel]
    return ProjectedBatch(
        index=idx,
        ids=gaussians.ids[idx],
        mean2d=mean2d[sel],
        cov2d=cov2d[sel],
        conic=conic,
        depth=z[sel],
        opacity=expit(gaussians.opacity_logits[idx]),
        color=gaussians.colors[idx],
        t_cam=t[sel],
        J=J[sel],
        M=M[sel],
        cov3d=cov3d[sel],
        R=R[sel],
        scales=s[sel],
        R_cw=R_cw,
    )


def project_gaussian(g: Gaussian3D, T_cw: SE3Pose, camera: PinholeCamera) -> Union[ProjectedGaussian, Culled]:
    batch = project_gaussians(GaussianSet.from_gaussians([g]), T_cw, camera)
    if len(batch) == 0:
        return CULLED
    return ProjectedGaussian(batch.mean2d[0], batch.cov2d[0], float(batch.depth[0]),
                             float(batch.opacity[0]), batch.color[0])


def evaluate_gaussian(g: ProjectedGaussian, pixel: np.ndarray) -> float:
    d = np.asarray(pixel, dtype=float) - g.mean2d
    return float(np.exp(-0.5 * d @ np.linalg.solve(g.cov2d, d)))
