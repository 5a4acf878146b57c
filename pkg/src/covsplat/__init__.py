"""Covariance-aware dense tracking feeding a 3D Gaussian splatting map."""

__version__ = "0.1.0"

from .config import MappingConfig, RunConfig, TrackingConfig, load_config
from .errors import CovsplatError
from .geometry import PinholeCamera, SE3Pose
from .pipeline import RunResult, evaluate, run, write_run

__all__ = [
    "CovsplatError",
    "MappingConfig",
    "PinholeCamera",
    "RunConfig",
    "RunResult",
    "SE3Pose",
    "TrackingConfig",
    "evaluate",
    "load_config",
    "run",
    "write_run",
]
