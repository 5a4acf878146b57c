"""Image, depth and trajectory metrics plus evaluation-frame selection."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter

from .errors import NoEvalFrames, TooFewPoses
from .geometry import SE3Pose

log = logging.getLogger(__name__)

PSNR_CAP_DB = 99.0
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius 5 -> 11x11 window
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
ALIGNMENTS = ("sim3", "se3", "none")


def psnr(rendered: np.ndarray, target: np.ndarray) -> float:
    """PSNR in dB for images in ``[0, 1]``; a perfect match reports ``PSNR_CAP_DB``."""
    mse = float(np.mean((np.asarray(rendered, dtype=float) - np.asarray(target, dtype=float)) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(-10.0 * math.log10(mse), PSNR_CAP_DB)


def _blur(x: np.ndarray) -> np.ndarray:
    return gaussian_filter(x, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")


def ssim(rendered: np.ndarray, target: np.ndarray) -> float:
    """Mean SSIM over pixels and channels with an 11x11 Gaussian window."""
    a = np.asarray(rendered, dtype=float)
    b = np.asarray(target, dtype=float)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    values = []
    for c in range(a.shape[-1]):
        x, y = a[..., c], b[..., c]
        mx, my = _blur(x), _blur(y)
        sxx = _blur(x * x) - mx * mx
        syy = _blur(y * y) - my * my
        sxy = _blur(x * y) - mx * my
        num = (2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
        values.append(num / den)
    return float(np.clip(np.mean(values), -1.0, 1.0))


def depth_l1(rendered: np.ndarray, target: np.ndarray, valid: np.ndarray | None = None, scale: float = 1.0) -> float:
    """Mean ``|scale * rendered - target|`` over pixels with positive target depth."""
    r = np.asarray(rendered, dtype=float) * scale
    t = np.asarray(target, dtype=float)
    mask = (t > 0) & np.isfinite(r)
    if valid is not None:
        mask &= valid
    if not mask.any():
        return float("nan")
    return float(np.mean(np.abs(r[mask] - t[mask])))


@dataclass
class Alignment:
    """``x_gt ~ scale * rotation @ x_est + translation``."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=float) @ self.rotation.T + self.translation


def _positions(trajectory: Sequence[SE3Pose] | np.ndarray) -> np.ndarray:
    if isinstance(trajectory, np.ndarray):
        return trajectory.reshape(-1, 3).astype(float)
    return np.array([p.t for p in trajectory], dtype=float).reshape(-1, 3)


def umeyama_alignment(est: np.ndarray, gt: np.ndarray, with_scale: bool = True) -> Alignment:
    """Closed-form least-squares similarity (or rigid) fit of ``est`` onto ``gt``."""
    n = len(est)
    mu_e, mu_g = est.mean(axis=0), gt.mean(axis=0)
    de, dg = est - mu_e, gt - mu_g
    cov = dg.T @ de / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    scale = 1.0
    if with_scale:
        var_e = float(np.mean(np.sum(de**2, axis=1)))
        scale = float(np.trace(np.diag(D) @ S) / var_e) if var_e > 0 else 1.0
    t = mu_g - scale * R @ mu_e
    return Alignment(scale, R, t)


def align_trajectory(
    estimated: Sequence[SE3Pose] | np.ndarray, ground_truth: Sequence[SE3Pose] | np.ndarray, alignment: str = "sim3"
) -> Alignment:
    est, gt = _positions(estimated), _positions(ground_truth)
    if len(est) != len(gt):
        raise ValueError(f"trajectories differ in length: {len(est)} vs {len(gt)}")
    if len(est) < 3:
        raise TooFewPoses(f"need at least 3 associated poses, got {len(est)}")
    if alignment == "none":
        return Alignment()
    if alignment not in ALIGNMENTS:
        raise ValueError(f"alignment must be one of {ALIGNMENTS}")
    return umeyama_alignment(est, gt, with_scale=alignment == "sim3")


def ate_rmse(
    estimated: Sequence[SE3Pose] | np.ndarray, ground_truth: Sequence[SE3Pose] | np.ndarray, alignment: str = "sim3"
) -> float:
    """RMSE of translational residuals after aligning ``estimated`` onto ``ground_truth``."""
    fit = align_trajectory(estimated, ground_truth, alignment)
    residual = fit.apply(_positions(estimated)) - _positions(ground_truth)
    return float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))


def select_eval_frames(num_frames: int, keyframe_frames: Iterable[int], stride: int = 5) -> List[int]:
    """Every ``stride``-th frame index that was not used as a mapping keyframe."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    used = set(int(k) for k in keyframe_frames)
    frames = [k for k in range(0, num_frames, stride) if k not in used]
    if not frames:
        raise NoEvalFrames(f"stride {stride} over {num_frames} frames leaves nothing once keyframes are excluded")
    return frames


@dataclass
class EvalReport:
    frame_ids: List[int] = field(default_factory=list)
    psnr: List[float] = field(default_factory=list)
    ssim: List[float] = field(default_factory=list)
    depth_l1: List[float] = field(default_factory=list)
    ate_rmse: float = float("nan")
    depth_scale: float = 1.0

    def add(self, frame_id: int, psnr_db: float, ssim_value: float, depth_err: float) -> None:
        self.frame_ids.append(int(frame_id))
        self.psnr.append(float(psnr_db))
        self.ssim.append(float(ssim_value))
        self.depth_l1.append(float(depth_err))

    def frames(self) -> pd.DataFrame:
        return pd.DataFrame({"frame": self.frame_ids, "psnr": self.psnr, "ssim": self.ssim,
                             "depth_l1": self.depth_l1})

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    @property
    def mean_depth_l1(self) -> float:
        d = np.asarray(self.depth_l1, dtype=float)
        d = d[np.isfinite(d)]
        return float(d.mean()) if d.size else float("nan")

    def summary(self) -> Dict[str, float]:
        return {
            "frames": len(self.frame_ids),
            "psnr": self.mean_psnr,
            "ssim": self.mean_ssim,
            "depth_l1": self.mean_depth_l1,
            "depth_l1_cm": self.mean_depth_l1 * 100.0,
            "ate_rmse": self.ate_rmse,
            "depth_scale": self.depth_scale,
        }
