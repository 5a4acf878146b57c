"""Covariance mask: where depth is certain enough to seed Gaussians."""
from __future__ import annotations

import numpy as np
from scipy.ndimage import maximum_filter, uniform_filter


def normalize_covariance(sigma: np.ndarray) -> np.ndarray:
    """Min-max normalise to ``[0, 1]``; a constant grid maps to all zeros."""
    sigma = np.asarray(sigma, dtype=float)
    lo, hi = float(sigma.min()), float(sigma.max())
    if hi == lo:
        return np.zeros_like(sigma)
    return (sigma - lo) / (hi - lo)


def covariance_mask(sigma: np.ndarray, threshold: float = 0.2, kernel: int = 32) -> np.ndarray:
    """Max-filter the normalised covariance, threshold it, then majority-filter the result."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("covariance must be >= 0")
    norm = normalize_covariance(sigma)
    widened = maximum_filter(norm, size=kernel, mode="nearest")
    certain = widened < threshold
    return uniform_filter(certain.astype(np.float64), size=kernel, mode="nearest") > 0.5
