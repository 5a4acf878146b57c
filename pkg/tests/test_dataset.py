import tempfile
import unittest
from pathlib import Path

import numpy as np

from helpers import tiny_spec, write_tum_fixture
from covsplat.dataset import TUM_DEFAULT_CAMERA, load_dataset, write_manifest
from covsplat.errors import DatasetError, MalformedLine, MissingIndex
from covsplat.geometry import PinholeCamera
from covsplat.synthetic import generate_scene, save_scene

_GT_IDENTITY = "0 0 0 0 0 0 1"


class TestTumLoader(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name) / "tum"

    def tearDown(self):
        self._tmp.cleanup()

    def test_two_frames(self):
        write_tum_fixture(self.root, rgb=[(1.0, "rgb/a.png"), (1.1, "rgb/b.png")],
                          depth=[(1.005, "depth/a.png"), (1.1, "depth/b.png")],
                          groundtruth=[f"1.0 {_GT_IDENTITY}", "1.101 1 2 3 0 0 0 1"])
        ds = load_dataset(self.root, "tum")
        self.assertEqual(len(ds), 2)
        self.assertLess(ds[0].timestamp, ds[1].timestamp)
        np.testing.assert_allclose(ds[1].pose.t, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(ds[0].load_depth(), 1.5)
        self.assertEqual(ds[0].load_image().shape, (3, 4, 3))
        self.assertEqual(ds.camera, TUM_DEFAULT_CAMERA)

    def test_far_groundtruth_is_not_associated(self):
        write_tum_fixture(self.root, rgb=[(1.0, "a.png"), (1.1, "b.png")],
                          groundtruth=[f"1.0 {_GT_IDENTITY}", f"1.15 {_GT_IDENTITY}"])
        ds = load_dataset(self.root, "tum")
        self.assertIsNotNone(ds[0].pose)
        self.assertIsNone(ds[1].pose)
        self.assertIsNone(ds[1].load_depth())

    def test_malformed_quaternion_reports_line(self):
        write_tum_fixture(self.root, rgb=[(1.0, "a.png")], groundtruth=["1.0 0 0 0 0 0 0 2"])
        with self.assertRaises(MalformedLine) as cm:
            load_dataset(self.root, "tum")
        self.assertEqual(cm.exception.line_no, 2)

    def test_timestamps_must_increase(self):
        write_tum_fixture(self.root, rgb=[(1.0, "a.png"), (1.0, "b.png")])
        with self.assertRaises(MalformedLine) as cm:
            load_dataset(self.root, "tum")
        self.assertEqual(cm.exception.line_no, 3)

    def test_camera_file(self):
        write_tum_fixture(self.root, rgb=[(1.0, "a.png")])
        (self.root / "camera.txt").write_text("10 11 1.5 1 4 3\n", encoding="utf-8")
        self.assertEqual(load_dataset(self.root, "tum").camera, PinholeCamera(10.0, 11.0, 1.5, 1.0, 4, 3))

    def test_missing_index(self):
        self.root.mkdir()
        with self.assertRaises(MissingIndex):
            load_dataset(self.root, "tum")

    def test_bad_directory_and_format(self):
        with self.assertRaises(DatasetError):
            load_dataset(self.root / "nope", "tum")
        self.root.mkdir()
        with self.assertRaises(ValueError):
            load_dataset(self.root, "kitti")


class TestSyntheticManifest(unittest.TestCase):
    def test_saved_scene_loads_back_exactly(self):
        scene = generate_scene(tiny_spec(frames=4), seed=5)
        with tempfile.TemporaryDirectory() as d:
            save_scene(scene, d)
            ds = load_dataset(d, "synthetic")
            self.assertEqual(len(ds), 4)
            self.assertEqual(ds.camera, scene.camera)
            for k, frame in enumerate(ds):
                np.testing.assert_array_equal(frame.load_image(), scene.images[k])
                np.testing.assert_array_equal(frame.load_depth(), scene.depths[k])
                np.testing.assert_allclose(frame.pose.matrix(), scene.poses[k].matrix(), atol=1e-9)
                self.assertEqual(frame.timestamp, scene.timestamps[k])

    def test_frame_count_mismatch(self):
        cam = PinholeCamera(1.0, 1.0, 0.5, 0.5, 2, 2)
        with tempfile.TemporaryDirectory() as d:
            path = write_manifest(Path(d), cam, 5000.0, [(0.0, "a.png", None, None)])
            path.write_text(path.read_text(encoding="utf-8").replace("frames 1", "frames 3"), encoding="utf-8")
            with self.assertRaises(DatasetError):
                load_dataset(d, "synthetic")

    def test_bad_header(self):
        with tempfile.TemporaryDirectory() as d:
            (Path(d) / "manifest.txt").write_text("hello 1\n", encoding="utf-8")
            with self.assertRaises(MalformedLine) as cm:
                load_dataset(d)
            self.assertEqual(cm.exception.line_no, 1)

    def test_clipped(self):
        ds = generate_scene(tiny_spec(frames=5)).to_dataset()
        self.assertEqual([f.timestamp for f in ds.clipped(1, 2)], [ds[1].timestamp, ds[2].timestamp])
        self.assertEqual(len(ds.clipped(3)), 2)


if __name__ == "__main__":
    unittest.main()
