"""Dataset loading: TUM RGB-D directory layout and the synthetic manifest."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DatasetError, MalformedLine, MissingIndex
from .geometry import PinholeCamera, SE3Pose
from .image_io import read_depth, read_rgb

log = logging.getLogger(__name__)

ASSOCIATION_TOLERANCE_S = 0.02
TUM_DEPTH_SCALE = 5000.0
# freiburg1 intrinsics, used when a TUM directory has no camera.txt
TUM_DEFAULT_CAMERA = PinholeCamera(517.3, 516.5, 318.6, 255.3, 640, 480)
MANIFEST_NAME = "manifest.txt"
MANIFEST_MAGIC = "covsplat-synthetic"


@dataclass
class DatasetFrame:
    timestamp: float
    image_path: Optional[Path] = None
    image: Optional[np.ndarray] = None
    pose: Optional[SE3Pose] = None
    depth: Optional[np.ndarray] = None
    depth_path: Optional[Path] = None
    depth_scale: float = TUM_DEPTH_SCALE

    def load_image(self) -> np.ndarray:
        if self.image is not None:
            return self.image
        if self.image_path is None:
            raise DatasetError(f"frame {self.timestamp} has no image")
        return read_rgb(self.image_path)

    def load_depth(self) -> Optional[np.ndarray]:
        if self.depth is not None:
            return self.depth
        if self.depth_path is None:
            return None
        return read_depth(self.depth_path, self.depth_scale)


@dataclass
class Dataset:
    name: str
    camera: PinholeCamera
    frames: List[DatasetFrame] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[DatasetFrame]:
        return iter(self.frames)

    def __getitem__(self, k: int) -> DatasetFrame:
        return self.frames[k]

    def clipped(self, start: int = 0, max_frames: int = 0) -> "Dataset":
        frames = self.frames[start:]
        if max_frames > 0:
            frames = frames[:max_frames]
        return Dataset(self.name, self.camera, frames)


def _data_lines(path: Path) -> Iterator[Tuple[int, List[str]]]:
    with path.open("r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            body = line.strip()
            if not body or body.startswith("#"):
                continue
            yield n, body.split()


def _pose_from_fields(values: Sequence[str], n: int, path: Path) -> SE3Pose:
    try:
        tx, ty, tz, qx, qy, qz, qw = (float(v) for v in values)
    except ValueError:
        raise MalformedLine(n, str(path), "pose fields are not numbers") from None
    q = np.array([qw, qx, qy, qz])
    norm = np.linalg.norm(q)
    if not np.all(np.isfinite(q)) or abs(norm - 1.0) > 1e-3:
        raise MalformedLine(n, str(path), f"quaternion norm {norm:.6f} is not 1")
    return SE3Pose(q, [tx, ty, tz])


def _read_index(path: Path, ncols: int) -> pd.DataFrame:
    rows = []
    for n, parts in _data_lines(path):
        if len(parts) != ncols:
            raise MalformedLine(n, str(path), f"expected {ncols} fields, got {len(parts)}")
        try:
            ts = float(parts[0])
        except ValueError:
            raise MalformedLine(n, str(path), "timestamp is not a number") from None
        rows.append((ts, n, parts[1:]))
    return pd.DataFrame(rows, columns=["timestamp", "line", "fields"])


def _check_increasing(df: pd.DataFrame, path: Path) -> None:
    ts = df["timestamp"].to_numpy()
    bad = np.flatnonzero(np.diff(ts) <= 0)
    if bad.size:
        raise MalformedLine(int(df["line"].iloc[bad[0] + 1]), str(path), "timestamps not strictly increasing")


def _associate(left: pd.DataFrame, right: pd.DataFrame, name: str) -> pd.DataFrame:
    """Nearest right-row within the tolerance for every left row."""
    r = right.rename(columns={"fields": name, "line": f"{name}_line"})
    r = r.assign(**{f"{name}_ts": r["timestamp"]}).sort_values("timestamp")
    return pd.merge_asof(left.sort_values("timestamp"), r, on="timestamp", direction="nearest",
                         tolerance=ASSOCIATION_TOLERANCE_S)


def _read_camera(path: Path, default: PinholeCamera) -> PinholeCamera:
    if not path.exists():
        return default
    for n, parts in _data_lines(path):
        if len(parts) != 6:
            raise MalformedLine(n, str(path), "expected 'fx fy cx cy width height'")
        try:
            fx, fy, cx, cy = (float(v) for v in parts[:4])
            w, h = int(parts[4]), int(parts[5])
        except ValueError:
            raise MalformedLine(n, str(path), "camera fields are not numbers") from None
        return PinholeCamera(fx, fy, cx, cy, w, h)
    return default


def load_tum(root: Path) -> Dataset:
    rgb_index = root / "rgb.txt"
    if not rgb_index.exists():
        raise MissingIndex(f"{rgb_index} not found")
    rgb = _read_index(rgb_index, 2)
    if rgb.empty:
        raise DatasetError(f"{rgb_index} lists no frames")
    _check_increasing(rgb, rgb_index)
    table = rgb.rename(columns={"fields": "rgb"})

    depth_index = root / "depth.txt"
    if depth_index.exists():
        table = _associate(table, _read_index(depth_index, 2), "depth")
    gt_index = root / "groundtruth.txt"
    gt_poses = {}
    if gt_index.exists():
        gt = _read_index(gt_index, 8)
        for n, fields_ in zip(gt["line"], gt["fields"]):
            gt_poses[n] = _pose_from_fields(fields_, n, gt_index)
        table = _associate(table, gt, "gt")

    frames = []
    for row in table.itertuples(index=False):
        pose = None
        if "gt" in table.columns and isinstance(row.gt, list):
            pose = gt_poses[int(row.gt_line)]
        depth_path = None
        if "depth" in table.columns and isinstance(row.depth, list):
            depth_path = root / row.depth[0]
        frames.append(DatasetFrame(float(row.timestamp), root / row.rgb[0], pose=pose, depth_path=depth_path))
    missing = sum(f.pose is None for f in frames)
    if gt_index.exists() and missing:
        log.info("%s: %d of %d frames have no ground-truth pose within %.2f s",
                 root, missing, len(frames), ASSOCIATION_TOLERANCE_S)
    return Dataset(root.name, _read_camera(root / "camera.txt", TUM_DEFAULT_CAMERA), frames)


def write_manifest(root: Path, camera: PinholeCamera, depth_scale: float,
                   records: Sequence[Tuple[float, str, Optional[str], Optional[SE3Pose]]]) -> Path:
    """Write ``manifest.txt``: header lines, then one line per frame."""
    lines = [
        f"{MANIFEST_MAGIC} 1",
        "camera " + " ".join(repr(float(v)) for v in camera.to_tuple()[:4]) + f" {camera.width} {camera.height}",
        f"depth_scale {depth_scale!r}",
        f"frames {len(records)}",
    ]
    for ts, rgb, depth, pose in records:
        if pose is None:
            pose_txt = "- - - - - - -"
        else:
            qw, qx, qy, qz = pose.rotation
            pose_txt = " ".join(repr(float(v)) for v in (*pose.translation, qx, qy, qz, qw))
        lines.append(f"{ts!r} {rgb} {depth or '-'} {pose_txt}")
    path = root / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_synthetic(root: Path) -> Dataset:
    path = root / MANIFEST_NAME
    if not path.exists():
        raise MissingIndex(f"{path} not found")
    header = {}
    frames: List[DatasetFrame] = []
    expected = None
    for n, parts in _data_lines(path):
        key = parts[0]
        if not header and key != MANIFEST_MAGIC:
            raise MalformedLine(n, str(path), f"expected '{MANIFEST_MAGIC}' header")
        if key in (MANIFEST_MAGIC, "camera", "depth_scale", "frames"):
            header[key] = parts[1:]
            if key == "frames":
                try:
                    expected = int(parts[1])
                except (IndexError, ValueError):
                    raise MalformedLine(n, str(path), "bad frame count") from None
            continue
        if len(parts) != 10:
            raise MalformedLine(n, str(path), f"expected 10 fields, got {len(parts)}")
        try:
            ts = float(parts[0])
        except ValueError:
            raise MalformedLine(n, str(path), "timestamp is not a number") from None
        pose = None if parts[3] == "-" else _pose_from_fields(parts[3:], n, path)
        try:
            scale = float(header.get("depth_scale", [TUM_DEPTH_SCALE])[0])
        except ValueError:
            raise MalformedLine(n, str(path), "bad depth_scale") from None
        if frames and ts <= frames[-1].timestamp:
            raise MalformedLine(n, str(path), "timestamps not strictly increasing")
        frames.append(DatasetFrame(
            ts,
            root / parts[1],
            pose=pose,
            depth_path=None if parts[2] == "-" else root / parts[2],
            depth_scale=scale,
        ))
    if "camera" not in header:
        raise DatasetError(f"{path} has no camera line")
    cam = header["camera"]
    camera = PinholeCamera(float(cam[0]), float(cam[1]), float(cam[2]), float(cam[3]), int(cam[4]), int(cam[5]))
    if expected is not None and expected != len(frames):
        raise DatasetError(f"{path} declares {expected} frames but lists {len(frames)}")
    if not frames:
        raise DatasetError(f"{path} lists no frames")
    return Dataset(root.name, camera, frames)


def load_dataset(directory: str | Path, format: str = "synthetic") -> Dataset:
    root = Path(directory)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    fmt = (format or "synthetic").strip().lower()
    if fmt == "tum":
        return load_tum(root)
    if fmt == "synthetic":
        return load_synthetic(root)
    raise ValueError(f"Unknown dataset format: {format!r}")
