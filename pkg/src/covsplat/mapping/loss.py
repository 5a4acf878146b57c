"""Color L1 plus covariance-weighted depth L1."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..splat.rasterizer import RenderedFrame
from .pyramid import PyramidLevel

DEPTH_LOSS_MODES = ("weighted", "raw", "none")


@dataclass
class LossResult:
    loss: float
    color_loss: float
    depth_loss: float
    grad_color: np.ndarray
    grad_depth: np.ndarray


def mapping_loss(
    rendered: RenderedFrame,
    target: PyramidLevel,
    alpha: float,
    depth_loss: str = "weighted",
    eps: float = 1e-8,
    alpha_min: float = 0.5,
) -> LossResult:
    """``alpha * L_color + (1 - alpha) * L_depth``; gradients w.r.t. rendered color and depth.

    With ``depth_loss="none"`` the loss is the color term alone.
    """
    if depth_loss not in DEPTH_LOSS_MODES:
        raise ValueError(f"unknown depth loss {depth_loss!r}")
    depth, covariance, valid = target.depth, target.covariance, target.valid
    diff_c = rendered.color - target.image
    l_color = float(np.mean(np.abs(diff_c)))
    if depth_loss == "none":
        grad_color = np.sign(diff_c) / diff_c.size
        return LossResult(l_color, l_color, 0.0, grad_color, np.zeros_like(rendered.depth))

    grad_color = alpha * np.sign(diff_c) / diff_c.size
    use = valid & (rendered.alpha_acc > alpha_min)
    count = int(np.count_nonzero(use))
    grad_depth = np.zeros_like(rendered.depth)
    l_depth = 0.0
    if count:
        weight = 1.0 / (covariance + eps) if depth_loss == "weighted" else np.ones_like(covariance)
        diff_d = rendered.depth - depth
        l_depth = float(np.sum((weight * np.abs(diff_d))[use]) / count)
        grad_depth = np.where(use, (1.0 - alpha) * weight * np.sign(diff_d) / count, 0.0)
    return LossResult(alpha * l_color + (1.0 - alpha) * l_depth, l_color, l_depth, grad_color, grad_depth)
