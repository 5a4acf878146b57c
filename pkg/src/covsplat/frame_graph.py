"""Keyframe store and covisibility graph."""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Sequence, Set, Tuple

import numpy as np

from .errors import InsufficientKeyframes, UnknownFrame
from .geometry import InverseDepthMap, SE3Pose

log = logging.getLogger(__name__)

Edge = Tuple[int, int]


@dataclass
class Keyframe:
    id: int
    image: np.ndarray
    pose: SE3Pose
    depth: InverseDepthMap
    frame_index: int = -1
    timestamp: float = 0.0
    feature_handle: Any = None


def keyframe_decision(mean_flow_magnitude: float, threshold: float) -> bool:
    if mean_flow_magnitude < 0:
        raise ValueError("mean flow magnitude must be >= 0")
    return mean_flow_magnitude > threshold


@dataclass(frozen=True)
class GraphSnapshot:
    ids: Tuple[int, ...]
    poses: Dict[int, SE3Pose]
    depths: Dict[int, InverseDepthMap]
    edges: frozenset = field(default_factory=frozenset)


class FrameGraph:
    """Ordered keyframes plus a set of directed covisibility edges.

    Single writer (the tracking loop); :meth:`snapshot` may be called from
    other threads.
    """

    def __init__(self) -> None:
        self._keyframes: Dict[int, Keyframe] = {}
        self._order: List[int] = []
        self._edges: Set[Edge] = set()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._order)

    def __contains__(self, kf_id: int) -> bool:
        return kf_id in self._keyframes

    @property
    def ids(self) -> List[int]:
        return list(self._order)

    @property
    def edges(self) -> Set[Edge]:
        return set(self._edges)

    def keyframes(self) -> List[Keyframe]:
        return [self._keyframes[i] for i in self._order]

    def get(self, kf_id: int) -> Keyframe:
        try:
            return self._keyframes[kf_id]
        except KeyError:
            raise UnknownFrame(kf_id) from None

    def latest(self) -> Keyframe:
        if not self._order:
            raise InsufficientKeyframes("graph has no keyframes")
        return self._keyframes[self._order[-1]]

    def add_keyframe(self, kf: Keyframe) -> None:
        with self._lock:
            if kf.id in self._keyframes:
                raise ValueError(f"duplicate keyframe id {kf.id}")
            if self._order and kf.id <= self._order[-1]:
                raise ValueError(f"keyframe id {kf.id} is not monotone")
            if self._order:
                first = self._keyframes[self._order[0]]
                if kf.image.shape != first.image.shape:
                    raise ValueError("keyframe image dimensions changed")
            self._keyframes[kf.id] = kf
            self._order.append(kf.id)
        self.audit()

    def set_edges(self, edges: Iterable[Edge]) -> None:
        new = set(edges)
        with self._lock:
            self._edges = new
        self.audit()

    def update_state(self, kf_id: int, pose: SE3Pose | None = None, depth: InverseDepthMap | None = None) -> None:
        kf = self.get(kf_id)
        with self._lock:
            if pose is not None:
                kf.pose = pose
            if depth is not None:
                kf.depth = depth

    def snapshot(self) -> GraphSnapshot:
        with self._lock:
            return GraphSnapshot(
                ids=tuple(self._order),
                poses={i: self._keyframes[i].pose for i in self._order},
                depths={i: self._keyframes[i].depth.copy() for i in self._order},
                edges=frozenset(self._edges),
            )

    def audit(self) -> None:
        """Raise ``AssertionError`` if a structural invariant is broken."""
        with self._lock:
            ids = set(self._order)
            assert len(ids) == len(self._order), "duplicate ids"
            assert all(a < b for a, b in zip(self._order, self._order[1:])), "ids not monotone"
            for i, j in self._edges:
                assert i != j, f"self edge {i}"
                assert i in ids and j in ids, f"edge ({i},{j}) references a missing keyframe"
                assert (j, i) in self._edges, f"edge ({i},{j}) has no reverse"


def _symmetric(pairs: Iterable[Edge]) -> Set[Edge]:
    out: Set[Edge] = set()
    for i, j in pairs:
        if i != j:
            out.add((i, j))
            out.add((j, i))
    return out


def build_local_window(graph: FrameGraph | Sequence[int], window: int, radius: int = 3) -> Set[Edge]:
    """Edges among the newest ``window`` keyframes, each joined to ``radius`` neighbours per side."""
    if window < 2:
        raise ValueError("window must be >= 2")
    ids = graph.ids if isinstance(graph, FrameGraph) else list(graph)
    if len(ids) < 2:
        raise InsufficientKeyframes(f"need >= 2 keyframes, have {len(ids)}")
    active = ids[-window:]
    pairs = []
    for a in range(len(active)):
        for b in range(a + 1, min(len(active), a + radius + 1)):
            pairs.append((active[a], active[b]))
    return _symmetric(pairs)


def build_global_graph(
    keyframes: FrameGraph | Sequence[int],
    flow_distance: Callable[[int, int], float],
    proximity_threshold: float,
) -> Set[Edge]:
    """Consecutive chain plus every pair whose mean flow is below ``proximity_threshold``."""
    ids = keyframes.ids if isinstance(keyframes, FrameGraph) else list(keyframes)
    if len(ids) < 2:
        raise InsufficientKeyframes(f"need >= 2 keyframes, have {len(ids)}")
    pairs = list(zip(ids, ids[1:]))
    for a in range(len(ids)):
        for b in range(a + 2, len(ids)):
            dist = flow_distance(ids[a], ids[b])
            if dist < proximity_threshold:
                log.debug("proximity edge %d-%d (%.2f px)", ids[a], ids[b], dist)
                pairs.append((ids[a], ids[b]))
    return _symmetric(pairs)


def window_ids(edges: Iterable[Edge]) -> List[int]:
    """Sorted keyframe ids touched by ``edges``."""
    return sorted({i for e in edges for i in e})
