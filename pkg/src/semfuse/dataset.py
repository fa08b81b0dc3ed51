"""On-disk scene layout and ingestion.

A scene directory looks like:
    scene/intrinsics.txt
    scene/frames/<n:06>.depth.png   16-bit single channel, millimeters, 0 invalid
    scene/frames/<n:06>.pose.txt    4x4 camera-to-world, row-major
    scene/frames/<n:06>.pred.png    8-bit class ids, 255 ignore
    scene/frames/<n:06>.color.png   optional RGB
    scene/frames/<n:06>.gt.png      optional ground-truth class ids
    scene/frames/<n:06>.inst.png    optional instance ids, 255 none
Depth is converted to meters on load; everything else is used as stored.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .geometry import CameraIntrinsics, load_intrinsics, load_pose
from .labels import LabelMap, ROLE_GROUND_TRUTH, ROLE_RAW
from .volume import Frame

log = logging.getLogger(__name__)

_FRAME_RE = re.compile(r"^(\d{6})\.depth\.png$")


def write_depth_png(depth_m: np.ndarray, path: str | Path) -> None:
    """Depth in meters to 16-bit millimeter PNG (0 stays invalid)."""
    mm = np.round(np.asarray(depth_m, dtype=np.float64) * 1000.0)
    if mm.min() < 0 or mm.max() > 65535:
        raise ValueError("depth out of 16-bit millimeter range")
    Image.fromarray(mm.astype(np.uint16)).save(path)


def read_depth_png(path: str | Path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise DataError(f"{path}: depth must be single channel, got shape {arr.shape}")
    return (arr.astype(np.float32)) / 1000.0


def write_label_png(labels: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(labels)
    if arr.dtype != np.uint8:
        raise ValueError("label image must be uint8")
    Image.fromarray(arr, mode="L").save(path)


def read_label_png(path: str | Path, role: str) -> LabelMap:
    arr = np.asarray(Image.open(path))
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise DataError(f"{path}: label image must be 8-bit single channel")
    return LabelMap(arr, role)


def write_color_png(rgb: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path)


@dataclass
class FrameRecord:
    index: int
    depth_path: Path
    pose_path: Path
    pred_path: Path | None = None
    color_path: Path | None = None
    gt_path: Path | None = None
    inst_path: Path | None = None


@dataclass
class Sequence:
    scene_dir: Path
    intrinsics: CameraIntrinsics
    frames: list[FrameRecord]
    train_fraction: float = 0.8
    dropped_frames: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction <= 1:
            raise ValueError(f"train fraction must be in (0, 1], got {self.train_fraction}")
        indices = [f.index for f in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("frame indices must be strictly increasing")

    def train_split(self) -> list[FrameRecord]:
        n = max(1, int(len(self.frames) * self.train_fraction))
        return self.frames[:n]

    def test_split(self) -> list[FrameRecord]:
        return self.frames[len(self.train_split()):]

    def split(self, name: str) -> list[FrameRecord]:
        if name == "train":
            return self.train_split()
        if name == "test":
            return self.test_split()
        if name == "all":
            return list(self.frames)
        raise ValueError(f"unknown split {name!r}")


def ingest_scene(scene_dir: str | Path, train_fraction: float = 0.8) -> Sequence:
    """Validate a scene directory into a Sequence.

    Frames missing their pose file are dropped with a warning; a missing
    intrinsics file or an empty frame set is a hard error.
    """
    scene_dir = Path(scene_dir)
    intr_path = scene_dir / "intrinsics.txt"
    if not intr_path.exists():
        raise DataError(f"{scene_dir}: missing intrinsics.txt")
    try:
        intrinsics = load_intrinsics(intr_path)
    except ValueError as e:
        raise DataError(str(e)) from e

    frames_dir = scene_dir / "frames"
    records: list[FrameRecord] = []
    dropped = 0
    depth_files = sorted(frames_dir.glob("*.depth.png")) if frames_dir.exists() else []
    for depth_path in depth_files:
        m = _FRAME_RE.match(depth_path.name)
        if not m:
            continue
        index = int(m.group(1))
        stem = frames_dir / m.group(1)
        pose_path = Path(f"{stem}.pose.txt")
        if not pose_path.exists():
            log.warning("frame %06d: missing pose file, dropped", index)
            dropped += 1
            continue
        try:
            with Image.open(depth_path) as img:
                dw, dh = img.size
        except OSError:
            log.warning("frame %06d: unreadable depth file, dropped", index)
            dropped += 1
            continue
        if (dw, dh) != (intrinsics.width, intrinsics.height):
            log.warning("frame %06d: depth %dx%d does not match intrinsics, dropped",
                        index, dw, dh)
            dropped += 1
            continue
        pred = Path(f"{stem}.pred.png")
        color = Path(f"{stem}.color.png")
        gt = Path(f"{stem}.gt.png")
        inst = Path(f"{stem}.inst.png")
        records.append(FrameRecord(
            index=index,
            depth_path=depth_path,
            pose_path=pose_path,
            pred_path=pred if pred.exists() else None,
            color_path=color if color.exists() else None,
            gt_path=gt if gt.exists() else None,
            inst_path=inst if inst.exists() else None,
        ))
    if not records:
        raise DataError(f"{scene_dir}: no usable frames")
    return Sequence(scene_dir, intrinsics, records,
                    train_fraction=train_fraction, dropped_frames=dropped)


def load_frame(seq: Sequence, record: FrameRecord) -> Frame:
    """Materialize one frame; unreadable depth raises DataError."""
    try:
        depth = read_depth_png(record.depth_path)
    except (OSError, ValueError) as e:
        raise DataError(f"{record.depth_path}: {e}") from e
    h, w = depth.shape
    if (w, h) != (seq.intrinsics.width, seq.intrinsics.height):
        raise DataError(
            f"{record.depth_path}: {w}x{h} does not match intrinsics "
            f"{seq.intrinsics.width}x{seq.intrinsics.height}")
    try:
        pose = load_pose(record.pose_path)
    except ValueError as e:
        raise DataError(str(e)) from e
    prediction = (read_label_png(record.pred_path, ROLE_RAW)
                  if record.pred_path else None)
    gt = (read_label_png(record.gt_path, ROLE_GROUND_TRUTH)
          if record.gt_path else None)
    return Frame(
        index=record.index,
        depth=depth,
        prediction=prediction,
        pose=pose,
        rgb_path=str(record.color_path) if record.color_path else None,
        ground_truth=gt,
    )


def read_instance_png(path: str | Path) -> np.ndarray:
    arr = np.asarray(Image.open(path))
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise DataError(f"{path}: instance image must be 8-bit single channel")
    return arr
