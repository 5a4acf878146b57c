import unittest

import numpy as np

import helpers  # noqa: F401
from covsplat.errors import NoValidPixels, UnknownFrame
from covsplat.flow import (
    FlowRevision,
    GroundTruthProvider,
    ZeroProvider,
    create_flow_provider,
    mean_displacement,
    solver_inverse_depth,
)
from covsplat.geometry import PinholeCamera, SE3Pose, pixel_grid, reproject_field, se3_exp


class TestSolverInverseDepth(unittest.TestCase):
    def test_downsamples_and_marks_holes(self):
        depth = np.full((16, 16), 2.0)
        depth[1, 1] = 0.0
        inv, valid = solver_inverse_depth(depth, 4)
        self.assertEqual(inv.shape, (4, 4))
        self.assertFalse(valid[0, 0])
        self.assertTrue(valid[3, 3])
        self.assertAlmostEqual(inv[3, 3], 0.5)

    def test_factor_one_is_elementwise(self):
        depth = np.array([[1.0, 0.0], [4.0, 2.0]])
        inv, valid = solver_inverse_depth(depth, 1)
        np.testing.assert_array_equal(valid, depth > 0)
        np.testing.assert_allclose(inv, [[1.0, 0.0], [0.25, 0.5]])


class TestGroundTruthProvider(unittest.TestCase):
    def setUp(self):
        self.cam = PinholeCamera(20.0, 20.0, 7.5, 5.5, 16, 12)
        self.inv = np.full(self.cam.shape, 0.5)
        self.G0 = SE3Pose.identity()
        self.G1 = se3_exp(np.array([0.1, 0.0, 0.0, 0.0, 0.0, 0.0]))

    def _provider(self, **kw) -> GroundTruthProvider:
        p = GroundTruthProvider(self.cam, **kw)
        p.register(0, self.G0, self.inv)
        p.register(1, self.G1, self.inv)
        return p

    def test_targets_are_true_reprojection(self):
        p = self._provider()
        current = pixel_grid(16, 12)
        rev = p.flow_revision(0, 1, current)
        truth, _ = reproject_field(self.G0, self.G1, self.cam, self.inv)
        np.testing.assert_allclose(rev.targets(current), truth, atol=1e-12)
        np.testing.assert_array_equal(rev.confidence, 1.0)

    def test_mean_flow_scaled_to_full_resolution(self):
        # 0.1 units sideways at depth 2 shifts every pixel by fx * 0.05 = 1 px
        self.assertAlmostEqual(self._provider().mean_flow(0, 1), 1.0, places=9)
        self.assertAlmostEqual(self._provider(pixel_scale=8.0).mean_flow(0, 1), 8.0, places=9)
        self.assertEqual(self._provider().mean_flow(1, 1), 0.0)

    def test_noise_is_deterministic_per_pair(self):
        a = self._provider(noise_px=0.5, seed=3)
        b = self._provider(noise_px=0.5, seed=3)
        cur = pixel_grid(16, 12)
        np.testing.assert_array_equal(a.flow_revision(0, 1, cur).revision, b.flow_revision(0, 1, cur).revision)
        self.assertFalse(np.array_equal(a.flow_revision(0, 1, cur).revision,
                                        a.flow_revision(1, 0, cur).revision))
        conf = a.flow_revision(0, 1, cur).confidence
        self.assertAlmostEqual(float(conf.max()), 1.0 / (0.25 + 1e-6), places=6)

    def test_invalid_pixels_get_zero_confidence(self):
        p = GroundTruthProvider(self.cam)
        valid = np.ones(self.cam.shape, dtype=bool)
        valid[0, :] = False
        p.register(0, self.G0, self.inv, valid)
        p.register(1, self.G1, self.inv)
        rev = p.flow_revision(0, 1, pixel_grid(16, 12))
        np.testing.assert_array_equal(rev.confidence[0], 0.0)
        np.testing.assert_array_equal(rev.revision[0], 0.0)

    def test_unregistered_frame(self):
        with self.assertRaises(UnknownFrame):
            self._provider().mean_flow(0, 5)

    def test_register_checks_grid(self):
        with self.assertRaises(ValueError):
            GroundTruthProvider(self.cam).register(0, self.G0, np.ones((3, 3)))


class TestZeroProviderAndFactory(unittest.TestCase):
    def test_zero_provider(self):
        p = ZeroProvider()
        p.register(0)
        p.register(1)
        cur = np.random.default_rng(0).uniform(size=(3, 4, 2))
        rev = p.flow_revision(0, 1, cur)
        np.testing.assert_array_equal(rev.targets(cur), cur)
        self.assertEqual(p.mean_flow(0, 1), 0.0)

    def test_factory(self):
        cam = PinholeCamera(1.0, 1.0, 0.5, 0.5, 2, 2)
        self.assertIsInstance(create_flow_provider("ground_truth", camera=cam), GroundTruthProvider)
        self.assertIsInstance(create_flow_provider("ZERO"), ZeroProvider)
        with self.assertRaises(ValueError):
            create_flow_provider("raft")


class TestFlowRevision(unittest.TestCase):
    def test_shape_and_sign_checks(self):
        with self.assertRaises(ValueError):
            FlowRevision(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))
        with self.assertRaises(ValueError):
            FlowRevision(np.zeros((2, 2, 2)), -np.ones((2, 2, 2)))

    def test_mean_displacement_needs_valid_pixels(self):
        with self.assertRaises(NoValidPixels):
            mean_displacement(np.zeros((2, 2, 2)), np.zeros((2, 2), dtype=bool))


if __name__ == "__main__":
    unittest.main()
