"""Console logging for the ``covsplat`` command."""
from __future__ import annotations

import logging
import sys

_ROOT = logging.getLogger("covsplat")
_console: logging.Handler | None = None


def setup_logging(console_level: int = logging.WARNING) -> logging.Handler:
    """Send ``covsplat.*`` records to stderr at ``console_level``.

    Safe to call more than once: later calls only change the level. The trace
    logger does not propagate, so JSONL events stay out of the console.
    """
    global _console
    if _console is None:
        _console = logging.StreamHandler(sys.stderr)
        _console.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s",
                                                datefmt="%H:%M:%S"))
        _ROOT.setLevel(logging.DEBUG)
        _ROOT.addHandler(_console)
    _console.setLevel(console_level)
    return _console
