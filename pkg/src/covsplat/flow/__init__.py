"""Flow providers (flow revisions + confidence weights for DBA)."""

from __future__ import annotations

from typing import Any

from .base import FlowProvider, FlowRevision, frame_handle, mean_displacement
from .ground_truth import GroundTruthProvider, solver_inverse_depth
from .zero import ZeroProvider

__all__ = [
    "FlowProvider",
    "FlowRevision",
    "GroundTruthProvider",
    "ZeroProvider",
    "create_flow_provider",
    "frame_handle",
    "mean_displacement",
    "solver_inverse_depth",
]


def create_flow_provider(name: str = "ground_truth", **kwargs: Any) -> FlowProvider:
    """Factory for named flow providers: ``ground_truth`` or ``zero``."""
    key = (name or "ground_truth").strip().lower()
    if key in ("ground_truth", "gt", "oracle"):
        return GroundTruthProvider(**kwargs)
    if key == "zero":
        return ZeroProvider()
    raise ValueError(f"Unknown flow provider: {name!r}")
