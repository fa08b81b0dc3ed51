"""Pinhole camera model, rigid poses, and pixel <-> 3D projections.

Conventions used everywhere in this package:
  - camera frame: x right, y down, z forward (optical axis);
  - poses are camera-to-world; the inverse is computed on load when needed;
  - continuous pixel coordinates put integer (u, v) at the pixel center,
    so project/unproject are exact inverses;
  - depth is the z coordinate in the camera frame, in meters.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

ROTATION_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}"
            )

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame direction per pixel with z normalized to 1.

        Returns (height, width, 3) float64; multiplying by the pixel's depth
        gives the camera-frame point, exactly matching unproject_pixel.
        """
        u = np.arange(self.width, dtype=np.float64)
        v = np.arange(self.height, dtype=np.float64)
        uu, vv = np.meshgrid(u, v)
        rays = np.stack(
            [(uu - self.cx) / self.fx, (vv - self.cy) / self.fy, np.ones_like(uu)], axis=-1
        )
        return rays


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if np.abs(r @ r.T - np.eye(3)).max() > ROTATION_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise ValueError(f"rotation determinant {np.linalg.det(r):.9f} != +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"pose matrix must be 4x4, got {m.shape}")
        return Pose(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (self * other) p = self(other(p))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)


def unproject_pixel(u: float, v: float, depth: float, intr: CameraIntrinsics) -> np.ndarray:
    """Pixel plus depth to a camera-frame 3D point."""
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise ValueError(f"pixel ({u}, {v}) outside {intr.width}x{intr.height}")
    return np.array([
        (u - intr.cx) * depth / intr.fx,
        (v - intr.cy) * depth / intr.fy,
        depth,
    ])


def project_point(p: np.ndarray, intr: CameraIntrinsics) -> tuple[float, float, float]:
    """Camera-frame point to continuous pixel coordinates plus depth."""
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if z <= 0:
        raise ValueError(f"point behind camera, z={z}")
    return intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy, z


def transform_point(pose: Pose, p: np.ndarray) -> np.ndarray:
    """Camera-frame point to world frame (or generally: apply the pose)."""
    return pose.rotation @ np.asarray(p, dtype=np.float64) + pose.translation


def transform_points(pose: Pose, pts: np.ndarray) -> np.ndarray:
    """Vectorized transform_point for an (N, 3) array."""
    return pts @ pose.rotation.T + pose.translation


# --- file formats -----------------------------------------------------------
# Intrinsics: one ASCII line `fx fy cx cy width height`.
# Pose: 4x4 row-major camera-to-world matrix, four lines of four floats.


def load_intrinsics(path: str | Path) -> CameraIntrinsics:
    text = Path(path).read_text().split()
    if len(text) != 6:
        raise ValueError(f"{path}: expected 6 values `fx fy cx cy width height`, got {len(text)}")
    fx, fy, cx, cy = (float(x) for x in text[:4])
    width, height = int(text[4]), int(text[5])
    return CameraIntrinsics(fx, fy, cx, cy, width, height)


def save_intrinsics(intr: CameraIntrinsics, path: str | Path) -> None:
    Path(path).write_text(
        f"{intr.fx:.17g} {intr.fy:.17g} {intr.cx:.17g} {intr.cy:.17g} "
        f"{intr.width} {intr.height}\n"
    )


def load_pose(path: str | Path) -> Pose:
    rows = np.loadtxt(path)
    if rows.shape != (4, 4):
        raise ValueError(f"{path}: expected a 4x4 matrix, got shape {rows.shape}")
    return Pose.from_matrix(rows)


def save_pose(pose: Pose, path: str | Path) -> None:
    m = pose.matrix()
    lines = [" ".join(f"{x:.17g}" for x in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")
