"""Flow-provider interface: the source of flow targets and confidences for DBA."""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Set

import numpy as np

from ..errors import NoValidPixels, UnknownFrame


@dataclass
class FlowRevision:
    """Per-pixel flow correction ``revision`` and per-axis ``confidence`` at solver resolution."""

    revision: np.ndarray
    confidence: np.ndarray

    def __post_init__(self) -> None:
        self.revision = np.asarray(self.revision, dtype=float)
        self.confidence = np.asarray(self.confidence, dtype=float)
        if self.revision.shape != self.confidence.shape or self.revision.shape[-1] != 2:
            raise ValueError("revision and confidence must both be H x W x 2")
        if np.any(self.confidence < 0):
            raise ValueError("confidence must be >= 0")

    def targets(self, current_reprojection: np.ndarray) -> np.ndarray:
        return np.asarray(current_reprojection, dtype=float) + self.revision

    def scaled(self, k: float) -> "FlowRevision":
        return FlowRevision(self.revision.copy(), self.confidence * k)


def frame_handle(frame: Any) -> Any:
    """Keyframes and tracked frames carry their provider key in ``feature_handle``."""
    return getattr(frame, "feature_handle", frame)


class FlowProvider(ABC):
    """Supplies flow revisions for ordered frame pairs.

    Called from the tracking thread only; registration is never concurrent
    with queries.
    """

    #: multiply solver-grid displacements by this to report full-resolution pixels
    pixel_scale: float = 1.0

    def __init__(self) -> None:
        self._registered: Set[Any] = set()

    def _require(self, frame: Any) -> Any:
        h = frame_handle(frame)
        if h is None or h not in self._registered:
            raise UnknownFrame(h)
        return h

    def is_registered(self, frame: Any) -> bool:
        return frame_handle(frame) in self._registered

    @abstractmethod
    def flow_revision(self, frame_i: Any, frame_j: Any, current_reprojection: np.ndarray) -> FlowRevision:
        ...

    @abstractmethod
    def mean_flow(self, frame_i: Any, frame_j: Any) -> float:
        ...


def mean_displacement(targets: np.ndarray, valid: np.ndarray, pixel_scale: float = 1.0) -> float:
    """Mean norm of ``targets - pixel grid`` over ``valid`` pixels."""
    if not np.any(valid):
        raise NoValidPixels("no valid pixels for mean flow")
    h, w = valid.shape
    v, u = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    disp = targets - np.stack([u, v], axis=-1)
    return float(np.linalg.norm(disp[valid], axis=-1).mean() * pixel_scale)
