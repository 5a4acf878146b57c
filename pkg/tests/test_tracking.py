import unittest

import numpy as np

from helpers import SLOW
from covsplat.config import TrackingConfig
from covsplat.errors import DatasetError
from covsplat.geometry import PinholeCamera
from covsplat.metrics import ate_rmse
from covsplat.synthetic import SceneSpec, generate_scene
from covsplat.tracking import Tracker

_CAM = PinholeCamera(50.0, 50.0, 31.5, 23.5, 64, 48)


def _scene(frames: int = 10, arc: float = 30.0):
    return generate_scene(SceneSpec(frames=frames, arc_degrees=arc, camera=_CAM), seed=0)


def _track_all(tracker: Tracker, scene):
    return [tracker.track(k, ts, img, pose, depth)
            for k, (ts, img, pose, depth) in enumerate(zip(scene.timestamps, scene.images, scene.poses, scene.depths))]


class TestTracker(unittest.TestCase):
    def setUp(self):
        self.cfg = TrackingConfig(solver_downsample=4, local_ba_iterations=3, global_ba_iterations=3)

    def test_first_frame_is_identity_keyframe(self):
        scene = _scene(2)
        tracker = Tracker(_CAM, self.cfg)
        step = tracker.track(0, 0.0, scene.images[0], scene.poses[0], scene.depths[0])
        self.assertTrue(step.is_keyframe)
        self.assertEqual(step.keyframe_id, 0)
        np.testing.assert_array_equal(step.pose.matrix(), np.eye(4))
        state = tracker.keyframe_state(0)
        self.assertEqual(state.depth.shape, (48, 64))
        self.assertEqual(state.covariance.shape, (48, 64))

    def test_frames_must_arrive_in_order(self):
        scene = _scene(2)
        tracker = Tracker(_CAM, self.cfg)
        tracker.track(1, 0.0, scene.images[0], scene.poses[0], scene.depths[0])
        with self.assertRaises(ValueError):
            tracker.track(0, 0.0, scene.images[0], scene.poses[0], scene.depths[0])

    def test_oracle_flow_needs_ground_truth(self):
        tracker = Tracker(_CAM, self.cfg)
        with self.assertRaises(DatasetError):
            tracker.track(0, 0.0, np.zeros((48, 64, 3)), None, None)

    def test_keyframes_follow_flow_threshold(self):
        scene = _scene()
        tracker = Tracker(_CAM, self.cfg)
        steps = _track_all(tracker, scene)
        for step in steps[1:]:
            self.assertEqual(step.is_keyframe, step.mean_flow_px > self.cfg.keyframe_flow_threshold_px)
            if step.is_keyframe:
                self.assertEqual(step.ba_reports[0][0], "local")
        self.assertGreater(len(tracker.graph), 1)
        self.assertLess(len(tracker.graph), len(steps))
        self.assertEqual(sorted(tracker.keyframe_frames.values()), [s.frame_index for s in steps if s.is_keyframe])

        timestamps, poses = tracker.trajectory()
        self.assertEqual(timestamps, scene.timestamps)
        self.assertEqual(len(poses), len(scene.poses))
        self.assertTrue(all(np.all(np.isfinite(p.matrix())) for p in poses))
        self.assertIsNotNone(tracker.finish())

    def test_high_threshold_keeps_one_keyframe(self):
        cfg = TrackingConfig(solver_downsample=4, keyframe_flow_threshold_px=1e6, global_proximity_threshold_px=1e6)
        tracker = Tracker(_CAM, cfg)
        _track_all(tracker, _scene(4))
        self.assertEqual(len(tracker.graph), 1)
        self.assertIsNone(tracker.finish())
        self.assertEqual(len(tracker.trajectory()[1]), 4)

    def test_zero_flow_never_moves(self):
        tracker = Tracker(_CAM, TrackingConfig(solver_downsample=4, flow_provider="zero"))
        scene = _scene(3)
        for k, img in enumerate(scene.images):
            tracker.track(k, float(k), img)
        self.assertEqual(len(tracker.graph), 1)
        for pose in tracker.trajectory()[1]:
            np.testing.assert_allclose(pose.matrix(), np.eye(4), atol=1e-12)

    def test_global_ba_runs_every_period_past_the_window(self):
        cfg = TrackingConfig(solver_downsample=4, keyframe_flow_threshold_px=1e-6,
                             global_proximity_threshold_px=16.0, local_ba_iterations=1,
                             global_ba_iterations=1, frame_pose_iterations=2)
        tracker = Tracker(_CAM, cfg)
        scene = _scene(frames=30, arc=60.0)
        fired = []
        for k, (ts, img, pose, depth) in enumerate(zip(scene.timestamps, scene.images, scene.poses, scene.depths)):
            step = tracker.track(k, ts, img, pose, depth)
            self.assertTrue(step.is_keyframe)
            if any(kind == "global" for kind, _ in step.ba_reports):
                # global BA neither adds nor drops keyframes
                self.assertEqual(len(tracker.graph), step.keyframe_id + 1)
                fired.append(len(tracker.graph))
        self.assertEqual(fired, [20, 30])
        self.assertEqual(len(tracker.graph), 30)

    @unittest.skipUnless(SLOW, "set COVSPLAT_SLOW_TESTS=1")
    def test_trajectory_error_is_small(self):
        scene = _scene(frames=30, arc=60.0)
        tracker = Tracker(_CAM, TrackingConfig(solver_downsample=4))
        _track_all(tracker, scene)
        tracker.finish()
        _, poses = tracker.trajectory()
        self.assertLess(ate_rmse(poses, scene.poses), 0.02)


if __name__ == "__main__":
    unittest.main()
