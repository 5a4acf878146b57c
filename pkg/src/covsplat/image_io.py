"""8-bit color and 16-bit depth PNG I/O; arrays are float in memory."""
from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .errors import DatasetError


def read_rgb(path: str | Path) -> np.ndarray:
    """``(H, W, 3)`` float image in ``[0, 1]``."""
    raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if raw is None:
        raise DatasetError(f"cannot read image {path}")
    return cv2.cvtColor(raw, cv2.COLOR_BGR2RGB).astype(np.float64) / 255.0


def write_rgb(path: str | Path, image: np.ndarray) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    u8 = np.clip(np.round(np.asarray(image, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(p), cv2.cvtColor(u8, cv2.COLOR_RGB2BGR)):
        raise DatasetError(f"cannot write image {p}")


def quantize_rgb(image: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid so a PNG round trip is exact."""
    return np.clip(np.round(np.asarray(image, dtype=float) * 255.0), 0, 255) / 255.0


def read_depth(path: str | Path, scale: float) -> np.ndarray:
    """16-bit depth PNG divided by ``scale``; zero marks missing depth."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DatasetError(f"cannot read depth image {path}")
    if raw.ndim != 2:
        raise DatasetError(f"depth image {path} has {raw.shape[2]} channels")
    return raw.astype(np.float64) / scale


def write_depth(path: str | Path, depth: np.ndarray, scale: float) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    d = np.where(np.isfinite(depth) & (depth > 0), depth, 0.0)
    u16 = np.clip(np.round(d * scale), 0, 65535).astype(np.uint16)
    if not cv2.imwrite(str(p), u16):
        raise DatasetError(f"cannot write depth image {p}")
