import threading
import unittest

import numpy as np

import helpers  # noqa: F401
from covsplat.errors import InsufficientKeyframes, UnknownFrame
from covsplat.frame_graph import (
    FrameGraph,
    Keyframe,
    build_global_graph,
    build_local_window,
    keyframe_decision,
    window_ids,
)
from covsplat.geometry import InverseDepthMap, SE3Pose


def _kf(i: int, shape=(4, 4)) -> Keyframe:
    return Keyframe(i, np.zeros(shape + (3,)), SE3Pose.identity(), InverseDepthMap(np.ones(shape)), frame_index=i)


def _graph(n: int) -> FrameGraph:
    g = FrameGraph()
    for i in range(n):
        g.add_keyframe(_kf(i))
    return g


class TestKeyframeDecision(unittest.TestCase):
    def test_strictly_greater_than_threshold(self):
        self.assertFalse(keyframe_decision(4.0, 4.0))
        self.assertTrue(keyframe_decision(4.01, 4.0))
        self.assertFalse(keyframe_decision(0.0, 4.0))

    def test_negative_flow_rejected(self):
        with self.assertRaises(ValueError):
            keyframe_decision(-1.0, 4.0)


class TestFrameGraph(unittest.TestCase):
    def test_ids_are_monotone_and_unique(self):
        g = _graph(3)
        with self.assertRaises(ValueError):
            g.add_keyframe(_kf(1))
        with self.assertRaises(ValueError):
            g.add_keyframe(_kf(2))
        self.assertEqual(g.ids, [0, 1, 2])
        self.assertEqual(g.latest().id, 2)

    def test_image_dimensions_fixed(self):
        g = _graph(1)
        with self.assertRaises(ValueError):
            g.add_keyframe(_kf(1, shape=(5, 4)))

    def test_unknown_and_empty(self):
        g = FrameGraph()
        with self.assertRaises(InsufficientKeyframes):
            g.latest()
        with self.assertRaises(UnknownFrame):
            g.get(3)

    def test_edges_must_be_symmetric_and_known(self):
        g = _graph(3)
        g.set_edges({(0, 1), (1, 0)})
        with self.assertRaises(AssertionError):
            g.set_edges({(0, 1)})
        with self.assertRaises(AssertionError):
            g.set_edges({(0, 7), (7, 0)})

    def test_snapshot_is_isolated(self):
        g = _graph(2)
        snap = g.snapshot()
        g.update_state(1, depth=InverseDepthMap(np.full((4, 4), 2.0)))
        np.testing.assert_array_equal(snap.depths[1].values, 1.0)
        np.testing.assert_array_equal(g.get(1).depth.values, 2.0)

    def test_snapshot_while_writing(self):
        g = _graph(1)
        seen = []

        def reader():
            for _ in range(200):
                s = g.snapshot()
                seen.append(len(s.ids) == len(s.poses))

        t = threading.Thread(target=reader)
        t.start()
        for i in range(1, 50):
            g.add_keyframe(_kf(i))
        t.join()
        self.assertTrue(all(seen))


class TestWindows(unittest.TestCase):
    def test_local_window_radius(self):
        edges = build_local_window(_graph(5), window=16, radius=1)
        self.assertEqual(edges, {(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2), (3, 4), (4, 3)})

    def test_local_window_keeps_newest(self):
        edges = build_local_window(list(range(20)), window=4, radius=3)
        self.assertEqual(window_ids(edges), [16, 17, 18, 19])
        self.assertEqual(len(edges), 12)

    def test_local_window_needs_two(self):
        with self.assertRaises(InsufficientKeyframes):
            build_local_window(_graph(1), window=16)
        with self.assertRaises(ValueError):
            build_local_window(_graph(3), window=1)

    def test_global_graph_adds_proximity_edges(self):
        ids = [0, 1, 2, 3]
        close = {(0, 3)}
        edges = build_global_graph(ids, lambda a, b: 1.0 if (a, b) in close else 100.0, 16.0)
        chain = {(0, 1), (1, 2), (2, 3)}
        expected = chain | close
        expected |= {(j, i) for i, j in expected}
        self.assertEqual(edges, expected)


if __name__ == "__main__":
    unittest.main()
