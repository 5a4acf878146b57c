from __future__ import annotations

from typing import Any

import numpy as np

from .base import FlowProvider, FlowRevision


class ZeroProvider(FlowProvider):
    """No information: targets equal the current reprojection, unit confidence."""

    def register(self, handle: Any, *args: Any, **kwargs: Any) -> None:
        self._registered.add(handle)

    def flow_revision(self, frame_i: Any, frame_j: Any, current_reprojection: np.ndarray) -> FlowRevision:
        self._require(frame_i)
        self._require(frame_j)
        cur = np.asarray(current_reprojection, dtype=float)
        return FlowRevision(np.zeros_like(cur), np.ones_like(cur))

    def mean_flow(self, frame_i: Any, frame_j: Any) -> float:
        self._require(frame_i)
        self._require(frame_j)
        return 0.0
