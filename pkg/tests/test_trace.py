import json
import logging
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

import helpers  # noqa: F401
from covsplat.log_config import setup_logging
from covsplat.trace import TRACE_FILE, append_trace, close_trace, rotation_settings, trace_enabled


class TestTrace(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        close_trace()

    def tearDown(self):
        close_trace()
        self._tmp.cleanup()

    def _env(self, **extra):
        return patch.dict(os.environ, {"COVSPLAT_TRACE": "1", "COVSPLAT_TRACE_DIR": self._tmp.name, **extra})

    def test_writes_one_json_object_per_event(self):
        with self._env():
            append_trace({"event": "keyframe_added", "keyframe": np.int64(2), "cost": np.float64(0.5)})
            append_trace({"event": "mapping_cycle", "grid": np.arange(3)})
            close_trace()
        lines = (Path(self._tmp.name) / TRACE_FILE).read_text(encoding="utf-8").splitlines()
        events = [json.loads(line) for line in lines]
        self.assertEqual([e["event"] for e in events], ["keyframe_added", "mapping_cycle"])
        self.assertEqual(events[0]["keyframe"], 2)
        self.assertEqual(events[1]["grid"], [0, 1, 2])
        self.assertIn("ts", events[0])

    def test_disabled(self):
        with self._env(COVSPLAT_TRACE="0"):
            self.assertFalse(trace_enabled())
            append_trace({"event": "ignored"})
        self.assertFalse((Path(self._tmp.name) / TRACE_FILE).exists())

    def test_rotation_settings_are_clamped(self):
        with self._env(COVSPLAT_TRACE_MAX_MB="0.01", COVSPLAT_TRACE_BACKUPS="500"):
            self.assertEqual(rotation_settings(), (100_000, 100))
        with self._env(COVSPLAT_TRACE_MAX_MB="lots", COVSPLAT_TRACE_BACKUPS=""):
            self.assertEqual(rotation_settings(), (10_000_000, 5))


class TestLogConfig(unittest.TestCase):
    def test_repeat_calls_reuse_the_handler(self):
        first = setup_logging(logging.WARNING)
        second = setup_logging(logging.DEBUG)
        self.assertIs(first, second)
        self.assertEqual(second.level, logging.DEBUG)
        self.assertEqual(sum(h is first for h in logging.getLogger("covsplat").handlers), 1)
        setup_logging(logging.WARNING)


if __name__ == "__main__":
    unittest.main()
