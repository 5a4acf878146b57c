import unittest

import numpy as np

from helpers import tiny_spec
from covsplat.errors import InvalidSpec
from covsplat.splat.rasterizer import rasterize
from covsplat.synthetic import (
    BoxTexture,
    SceneSpec,
    depth_noise,
    generate_scene,
    look_at,
    make_trajectory,
    ray_cast_box,
    surface_gaussians,
)


class TestSceneGeneration(unittest.TestCase):
    def test_deterministic_in_seed(self):
        a = generate_scene(tiny_spec(frames=3), seed=2)
        b = generate_scene(tiny_spec(frames=3), seed=2)
        c = generate_scene(tiny_spec(frames=3), seed=3)
        for k in range(3):
            np.testing.assert_array_equal(a.images[k], b.images[k])
            np.testing.assert_array_equal(a.depths[k], b.depths[k])
        self.assertFalse(np.array_equal(a.images[0], c.images[0]))

    def test_orbit_sees_box_at_expected_depth(self):
        spec = tiny_spec(frames=4)
        scene = generate_scene(spec)
        for pose, depth in zip(scene.poses, scene.depths):
            _, _, on_box = ray_cast_box(pose, spec.camera, spec.box_half, spec.room_half)
            self.assertGreater(on_box.sum(), 0)
            self.assertTrue(np.all((depth[on_box] >= 1.0) & (depth[on_box] <= 3.0)))
            # the enclosing room fills every other pixel
            self.assertTrue(np.all(depth > 0))

    def test_gaussian_scene_renders(self):
        scene = generate_scene(tiny_spec(frames=2, kind="gaussians"), seed=1)
        self.assertEqual(len(scene.gaussians), SceneSpec().gaussian_count)
        self.assertGreater(np.count_nonzero(scene.depths[0]), 0)

    def test_loop_closes(self):
        poses = make_trajectory(SceneSpec(trajectory="loop", frames=9))
        np.testing.assert_array_equal(poses[-1].matrix(), poses[0].matrix())
        self.assertGreater(np.linalg.norm(poses[4].t - poses[0].t), 1.0)

    def test_line_is_straight(self):
        poses = make_trajectory(SceneSpec(trajectory="line", frames=5))
        ts = np.array([p.t for p in poses])
        np.testing.assert_allclose(ts[:, 1:], ts[0, 1:])
        self.assertAlmostEqual(ts[-1, 0] - ts[0, 0], 1.0)

    def test_invalid_specs(self):
        for kw in ({"kind": "torus"}, {"trajectory": "spiral"}, {"frames": 1}, {"radius": 0.3, "height": 0.0},
                   {"room_half": 2.0}):
            with self.subTest(**kw), self.assertRaises(InvalidSpec):
                generate_scene(SceneSpec(**kw))


class TestGeometryHelpers(unittest.TestCase):
    def test_look_at(self):
        pose = look_at([0.0, 0.0, 3.0], [0.0, 0.0, 0.0])
        np.testing.assert_allclose(pose.t, [0.0, 0.0, 3.0])
        np.testing.assert_allclose(pose.R[:, 2], [0.0, 0.0, -1.0], atol=1e-12)
        # image y points down the world up-axis
        np.testing.assert_allclose(pose.R[:, 1], [0.0, -1.0, 0.0], atol=1e-12)
        self.assertAlmostEqual(np.linalg.det(pose.R), 1.0)

    def test_ray_cast_centre_pixel(self):
        spec = tiny_spec()
        pose = look_at([0.0, 0.0, 2.0], [0.0, 0.0, 0.0])
        cam = spec.camera.resized(63, 47)
        depth, points, on_box = ray_cast_box(pose, cam, 0.5)
        self.assertTrue(on_box[23, 31])
        self.assertAlmostEqual(depth[23, 31], 1.5)
        np.testing.assert_allclose(points[23, 31], [0.0, 0.0, 0.5], atol=1e-12)
        self.assertEqual(depth[0, 0], 0.0)


class TestSurfaceGaussians(unittest.TestCase):
    def test_raster_depth_agrees_with_ray_cast(self):
        spec = tiny_spec()
        rng = np.random.default_rng(0)
        gaussians = surface_gaussians(BoxTexture.random(rng), spec.box_half, 1200, rng)
        pose = make_trajectory(spec)[1]
        truth, _, on_box = ray_cast_box(pose, spec.camera, spec.box_half)
        r = rasterize(gaussians, pose.inverse(), spec.camera)
        covered = on_box & (r.alpha_acc > 0.95)
        self.assertGreater(covered.sum(), 0.5 * on_box.sum())
        rendered = r.depth[covered] / r.alpha_acc[covered]
        self.assertLess(float(np.median(np.abs(rendered - truth[covered]))), 0.02)


class TestDepthNoise(unittest.TestCase):
    def test_sigma_grows_with_depth(self):
        depth = np.array([[1.0, 2.0], [3.0, 0.0]])
        noisy, sigma = depth_noise(depth, 0.01, 0.05, np.random.default_rng(0))
        np.testing.assert_allclose(sigma, [[0.01, 0.03], [0.05, 0.0]])
        self.assertEqual(noisy[1, 1], 0.0)
        self.assertTrue(np.all(noisy[depth > 0] > 0))
        again, _ = depth_noise(depth, 0.01, 0.05, np.random.default_rng(0))
        np.testing.assert_array_equal(noisy, again)


if __name__ == "__main__":
    unittest.main()
