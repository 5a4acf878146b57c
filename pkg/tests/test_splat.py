import tempfile
import unittest
from pathlib import Path

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import SLOW, naive_rasterize, random_gaussians
from covsplat.geometry import PinholeCamera, SE3Pose, se3_exp
from covsplat.splat import (
    CULLED,
    Gaussian3D,
    GaussianSet,
    evaluate_gaussian,
    load_gaussians,
    project_gaussian,
    rasterize,
    rasterize_backward,
    save_gaussians,
)
from covsplat.splat.gaussians import PARAM_GROUPS, opacity_to_logit

_CAM64 = PinholeCamera(60.0, 60.0, 31.5, 31.5, 64, 64)
_CAM16 = PinholeCamera(16.0, 16.0, 7.5, 7.5, 16, 16)


class TestProjection(unittest.TestCase):
    def test_centre_gaussian_projects_to_principal_point(self):
        g = Gaussian3D(np.array([0.0, 0.0, 2.0]), log_scale=np.full(3, np.log(0.1)), opacity_logit=2.0)
        p = project_gaussian(g, SE3Pose.identity(), _CAM64)
        np.testing.assert_allclose(p.mean2d, [31.5, 31.5])
        # isotropic sigma 0.1 at depth 2 -> 3 px, plus the low-pass term
        np.testing.assert_allclose(p.cov2d, np.eye(2) * (9.0 + 0.3), atol=1e-12)
        self.assertAlmostEqual(p.depth, 2.0)
        self.assertAlmostEqual(evaluate_gaussian(p, p.mean2d), 1.0)

    def test_behind_and_outside_are_culled(self):
        behind = Gaussian3D(np.array([0.0, 0.0, -1.0]))
        self.assertIs(project_gaussian(behind, SE3Pose.identity(), _CAM64), CULLED)
        outside = Gaussian3D(np.array([50.0, 0.0, 1.0]))
        self.assertIs(project_gaussian(outside, SE3Pose.identity(), _CAM64), CULLED)


class TestRasterizerForward(unittest.TestCase):
    def test_matches_naive_compositor(self):
        rng = np.random.default_rng(0)
        scenes = 100 if SLOW else 15
        for trial in range(scenes):
            g = random_gaussians(rng, int(rng.integers(1, 200)))
            T_cw = se3_exp(rng.normal(scale=0.05, size=6))
            out = rasterize(g, T_cw, _CAM64)
            color, depth, acc = naive_rasterize(g, T_cw, _CAM64)
            self.assertLess(np.abs(out.color - color).max(), 1e-6, f"scene {trial}")
            self.assertLess(np.abs(out.depth - depth).max(), 1e-6, f"scene {trial}")
            self.assertLess(np.abs(out.alpha_acc - acc).max(), 1e-6, f"scene {trial}")
            self.assertTrue(np.all((out.alpha_acc >= 0.0) & (out.alpha_acc <= 1.0)))

    def test_single_opaque_gaussian_is_clamped(self):
        g = GaussianSet(positions=[[0.0, 0.0, 2.0]], log_scales=[np.full(3, np.log(2.0))],
                        opacity_logits=[20.0], colors=[[0.2, 0.4, 0.6]])
        out = rasterize(g, SE3Pose.identity(), _CAM16)
        np.testing.assert_allclose(out.color[7, 7], 0.99 * np.array([0.2, 0.4, 0.6]), rtol=1e-6)
        self.assertGreater(out.visibility[0], 0.9)

    def test_empty_map_renders_black(self):
        out = rasterize(GaussianSet(), SE3Pose.identity(), _CAM16)
        self.assertFalse(out.color.any())
        self.assertFalse(out.alpha_acc.any())

    def test_front_gaussian_occludes(self):
        g = GaussianSet(positions=[[0.0, 0.0, 3.0], [0.0, 0.0, 1.0]], log_scales=np.full((2, 3), np.log(2.0)),
                        opacity_logits=[20.0, 20.0], colors=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        out = rasterize(g, SE3Pose.identity(), _CAM16)
        self.assertGreater(out.color[7, 7, 1], 0.98)
        self.assertLess(out.color[7, 7, 0], 0.01)
        self.assertAlmostEqual(out.depth[7, 7], 0.99 * 1.0 + 0.01 * 0.99 * 3.0, places=6)

    def test_workers_do_not_change_output(self):
        g = random_gaussians(np.random.default_rng(3), 120)
        a = rasterize(g, SE3Pose.identity(), _CAM64, workers=1)
        b = rasterize(g, SE3Pose.identity(), _CAM64, workers=4)
        np.testing.assert_array_equal(a.color, b.color)
        np.testing.assert_array_equal(a.depth, b.depth)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1), st.integers(min_value=1, max_value=60))
    def test_input_order_does_not_matter(self, seed, n):
        rng = np.random.default_rng(seed)
        g = random_gaussians(rng, n)
        perm = rng.permutation(n)
        shuffled = GaussianSet(g.positions[perm], g.rotations[perm], g.log_scales[perm],
                               g.opacity_logits[perm], g.colors[perm], g.ids[perm])
        a = rasterize(g, SE3Pose.identity(), _CAM16)
        b = rasterize(shuffled, SE3Pose.identity(), _CAM16)
        np.testing.assert_array_equal(a.color, b.color)
        np.testing.assert_array_equal(a.depth, b.depth)
        np.testing.assert_array_equal(a.alpha_acc, b.alpha_acc)
        np.testing.assert_array_equal(a.visibility[np.argsort(g.ids)], b.visibility[np.argsort(shuffled.ids)])


def _objective(g: GaussianSet, T_cw: SE3Pose, wc: np.ndarray, wd: np.ndarray) -> float:
    out = rasterize(g, T_cw, _CAM16)
    return float(np.sum(wc * out.color) + np.sum(wd * out.depth))


class TestRasterizerBackward(unittest.TestCase):
    def _check_scene(self, rng: np.random.Generator) -> None:
        n = int(rng.integers(1, 9))
        g = random_gaussians(rng, n, depth=(2.0, 4.0), spread=0.4, scale=(0.1, 0.3))
        g.opacity_logits = rng.uniform(-2.0, 0.5, size=n)
        T_cw = SE3Pose.identity()
        wc = rng.normal(size=(16, 16, 3))
        wd = rng.normal(size=(16, 16))
        grads = rasterize_backward(g, T_cw, _CAM16, wc, wd).as_dict()
        h = 1e-6
        for name in PARAM_GROUPS:
            param = getattr(g, name)
            analytic = grads[name].reshape(-1)
            numeric = np.zeros_like(analytic)
            flat = param.reshape(-1)
            for k in range(flat.size):
                old = flat[k]
                flat[k] = old + h
                up = _objective(g, T_cw, wc, wd)
                flat[k] = old - h
                down = _objective(g, T_cw, wc, wd)
                flat[k] = old
                numeric[k] = (up - down) / (2 * h)
            scale = max(np.abs(numeric).max(), 1e-3)
            rel = np.abs(analytic - numeric).max() / scale
            self.assertLess(rel, 1e-4, f"{name}: analytic {analytic} vs numeric {numeric}")

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            self._check_scene(rng)

    def test_zero_upstream_gradient(self):
        g = random_gaussians(np.random.default_rng(0), 5)
        grads = rasterize_backward(g, SE3Pose.identity(), _CAM16, np.zeros((16, 16, 3)), np.zeros((16, 16)))
        for arr in grads.as_dict().values():
            self.assertFalse(arr.any())


class TestGaussianSet(unittest.TestCase):
    def test_append_assigns_fresh_ids(self):
        g = GaussianSet(positions=np.zeros((2, 3)))
        ids = g.append(np.ones((3, 3)), np.tile([1.0, 0, 0, 0], (3, 1)), np.zeros((3, 3)), np.zeros(3),
                       np.zeros((3, 3)), seed_keyframe=4)
        np.testing.assert_array_equal(ids, [2, 3, 4])
        np.testing.assert_array_equal(g.seed_keyframe, [-1, -1, 4, 4, 4])
        sub = g.subset(np.array([True, False, True, False, True]))
        np.testing.assert_array_equal(sub.ids, [0, 2, 4])
        self.assertEqual(sub.next_id, 5)

    def test_row_count_mismatch(self):
        with self.assertRaises(ValueError):
            GaussianSet(positions=np.zeros((2, 3)), colors=np.zeros((3, 3)))

    def test_file_format(self):
        g = random_gaussians(np.random.default_rng(2), 7)
        g.opacity_logits = np.asarray(opacity_to_logit(np.full(7, 0.5)))
        with tempfile.TemporaryDirectory() as d:
            p = Path(d) / "map.igs"
            save_gaussians(p, g)
            self.assertTrue(p.read_bytes().startswith(b"IGS1 7\n"))
            back = load_gaussians(p)
            np.testing.assert_allclose(back.positions, g.positions, rtol=1e-6)
            np.testing.assert_allclose(back.opacities, 0.5, atol=1e-6)
            p.write_bytes(b"IGS1 9\n" + b"\x00" * 8)
            with self.assertRaises(ValueError):
                load_gaussians(p)


if __name__ == "__main__":
    unittest.main()
