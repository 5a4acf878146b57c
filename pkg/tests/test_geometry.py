import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

import helpers  # noqa: F401
from covsplat.errors import NonPositiveDepth, NonPositiveInverseDepth
from covsplat.geometry import (
    InverseDepthMap,
    PinholeCamera,
    SE3Pose,
    matrix_to_quat,
    pixel_grid,
    project,
    quat_to_matrix,
    relative_pose,
    reproject_field,
    se3_exp,
    se3_log,
    unproject,
)

_coord = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False)
_xi = st.lists(_coord, min_size=6, max_size=6)


class TestSE3(unittest.TestCase):
    @settings(max_examples=60, deadline=None)
    @given(_xi)
    def test_exp_log_roundtrip(self, xi):
        xi = np.array(xi)
        np.testing.assert_allclose(se3_log(se3_exp(xi)), xi, atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(_xi, _xi)
    def test_compose_with_inverse_is_identity(self, a, b):
        G = se3_exp(np.array(a)).compose(se3_exp(np.array(b)))
        I = G.compose(G.inverse()).matrix()
        np.testing.assert_allclose(I, np.eye(4), atol=1e-12)

    def test_retract_is_left_update(self):
        G = se3_exp(np.array([0.1, -0.2, 0.3, 0.05, 0.1, -0.2]))
        xi = np.array([0.01, 0.02, 0.0, 0.0, 0.01, 0.0])
        np.testing.assert_allclose(G.retract(xi).matrix(), se3_exp(xi).matrix() @ G.matrix(), atol=1e-12)

    def test_quaternion_is_scalar_first_and_canonical(self):
        G = SE3Pose(np.array([-1.0, 0.0, 0.0, 0.0]), [1, 2, 3])
        np.testing.assert_array_equal(G.rotation, [1.0, 0.0, 0.0, 0.0])
        R = quat_to_matrix(np.array([np.cos(0.3), 0.0, 0.0, np.sin(0.3)]))
        self.assertAlmostEqual(R[0, 0], np.cos(0.6), places=12)
        np.testing.assert_allclose(matrix_to_quat(R), [np.cos(0.3), 0.0, 0.0, np.sin(0.3)], atol=1e-12)

    def test_zero_quaternion_rejected(self):
        with self.assertRaises(ValueError):
            SE3Pose(np.zeros(4))

    def test_relative_pose_maps_camera_i_into_j(self):
        Gi = se3_exp(np.array([0.2, 0.0, 0.1, 0.0, 0.1, 0.0]))
        Gj = se3_exp(np.array([-0.1, 0.3, 0.0, 0.05, 0.0, 0.0]))
        X_i = np.array([0.1, -0.2, 2.0])
        np.testing.assert_allclose(relative_pose(Gi, Gj).transform(X_i),
                                   Gj.inverse().transform(Gi.transform(X_i)), atol=1e-12)


class TestCamera(unittest.TestCase):
    def setUp(self):
        self.cam = PinholeCamera(100.0, 100.0, 63.5, 47.5, 128, 96)

    def test_project_unproject_roundtrip(self):
        X = unproject(self.cam, np.array([10.0, 80.0]), 0.5)
        self.assertAlmostEqual(X[2], 2.0)
        np.testing.assert_allclose(project(self.cam, X), [10.0, 80.0], atol=1e-12)

    def test_project_behind_camera_raises(self):
        with self.assertRaises(NonPositiveDepth):
            project(self.cam, np.array([0.0, 0.0, -1.0]))
        with self.assertRaises(ValueError):
            project(self.cam, np.array([0.0, 0.0, 0.0]))

    def test_unproject_nonpositive_inverse_depth_raises(self):
        with self.assertRaises(NonPositiveInverseDepth):
            unproject(self.cam, np.array([1.0, 1.0]), 0.0)

    def test_downsampled_keeps_pixel_centres(self):
        small = self.cam.downsampled(8)
        self.assertEqual((small.width, small.height), (16, 12))
        self.assertAlmostEqual(small.fx, 12.5)
        self.assertAlmostEqual(small.cx, 7.5)
        self.assertAlmostEqual(small.cy, 5.5)

    def test_invalid_intrinsics(self):
        with self.assertRaises(ValueError):
            PinholeCamera(0.0, 1.0, 1.0, 1.0, 4, 4)
        with self.assertRaises(ValueError):
            PinholeCamera(1.0, 1.0, 5.0, 1.0, 4, 4)


class TestReprojectField(unittest.TestCase):
    def setUp(self):
        self.cam = PinholeCamera(20.0, 20.0, 7.5, 5.5, 16, 12)
        self.depth = np.full(self.cam.shape, 0.5)

    def test_identity_returns_pixel_grid(self):
        G = se3_exp(np.array([0.1, 0.2, 0.3, 0.0, 0.1, 0.0]))
        coords, valid = reproject_field(G, G, self.cam, self.depth)
        np.testing.assert_array_equal(coords, pixel_grid(16, 12))
        self.assertTrue(valid.all())

    def test_matches_pointwise_projection(self):
        Gi = SE3Pose.identity()
        Gj = se3_exp(np.array([0.05, 0.0, 0.0, 0.0, 0.02, 0.0]))
        coords, valid = reproject_field(Gi, Gj, self.cam, InverseDepthMap(self.depth))
        self.assertTrue(valid.all())
        X = unproject(self.cam, np.array([3.0, 4.0]), 0.5)
        expected = project(self.cam, Gj.inverse().transform(X))
        np.testing.assert_allclose(coords[4, 3], expected, atol=1e-10)

    def test_points_behind_target_are_invalid(self):
        Gj = SE3Pose.from_rt(np.diag([-1.0, 1.0, -1.0]), [0.0, 0.0, -5.0])
        _, valid = reproject_field(SE3Pose.identity(), Gj, self.cam, self.depth)
        self.assertFalse(valid.any())

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            reproject_field(SE3Pose.identity(), SE3Pose.identity(), self.cam, np.ones((3, 3)))


class TestInverseDepthMap(unittest.TestCase):
    def test_rejects_nonpositive_values(self):
        with self.assertRaises(NonPositiveInverseDepth):
            InverseDepthMap(np.array([[1.0, 0.0]]))

    def test_upsampled_returns_depth(self):
        d = InverseDepthMap(np.full((2, 2), 0.5), np.full((2, 2), 0.1))
        depth, cov = d.upsampled(8, 8)
        np.testing.assert_allclose(depth, 2.0)
        np.testing.assert_allclose(cov, 0.1)


if __name__ == "__main__":
    unittest.main()
