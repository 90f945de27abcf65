"""Rigid-body transforms, Euler conversions, and pinhole projection.

Conventions used throughout the package:

* An extrinsic is a 4x4 homogeneous matrix T mapping LiDAR-frame points into
  the camera frame: p_cam = T @ p_lidar (column vectors, meters).
* Euler angles are extrinsic X-Y-Z fixed-axis rotations composed as
  R = Rz(yaw) @ Ry(pitch) @ Rx(roll).
* Camera frame: x right, y down, z forward (optical axis). Pixel (u, v) has
  u along x and v along y; the pixel at row i, column j covers
  [j, j+1) x [i, i+1) with its center at (j+0.5, i+0.5).

All geometry here is double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# Points closer than this to the camera plane are outside the frustum;
# avoids division blow-up in the perspective divide.
Z_NEAR = 0.1

_SE3_TOL = 1e-9


class GeometryError(ValueError):
    pass


class EulerPose(NamedTuple):
    roll: float
    pitch: float
    yaw: float
    tx: float
    ty: float
    tz: float


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise GeometryError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}")


@dataclass(frozen=True)
class PointCloud:
    """N points as an (N, 4) float64 array: x, y, z meters + intensity in [0, 255]."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 4 or pts.shape[0] < 1:
            raise GeometryError(f"point cloud must be (N>=1, 4), got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point cloud contains non-finite values")
        object.__setattr__(self, "points", pts)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class DecalibRange:
    """Per-axis perturbation bounds: translation in meters, rotation in radians."""

    trans_max: float
    rot_max: float

    def __post_init__(self):
        if self.trans_max < 0 or self.rot_max < 0:
            raise GeometryError("decalibration ranges must be >= 0")


def validate_se3(t: np.ndarray, name: str = "transform") -> np.ndarray:
    """Check the SE(3) invariants; returns t as a float64 array."""
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (4, 4):
        raise GeometryError(f"{name} must be 4x4, got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise GeometryError(f"{name} contains non-finite values")
    if not np.array_equal(t[3], [0.0, 0.0, 0.0, 1.0]):
        raise GeometryError(f"{name} bottom row must be (0,0,0,1), got {t[3]}")
    r = t[:3, :3]
    if np.abs(r @ r.T - np.eye(3)).max() > _SE3_TOL:
        raise GeometryError(f"{name} rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > _SE3_TOL:
        raise GeometryError(f"{name} rotation determinant is not +1")
    return t


def euler_to_se3(pose: EulerPose) -> np.ndarray:
    """Build a 4x4 transform; R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    vals = np.asarray(pose, dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise GeometryError(f"pose contains non-finite values: {pose}")
    roll, pitch, yaw, tx, ty, tz = vals
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    t = np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr, tx],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr, ty],
        [-sp, cp * sr, cp * cr, tz],
        [0.0, 0.0, 0.0, 1.0],
    ])
    return t


def euler_from_se3(t: np.ndarray) -> EulerPose:
    """Recover (roll, pitch, yaw, tx, ty, tz); requires |pitch| < pi/2."""
    t = validate_se3(t)
    r = t[:3, :3]
    if abs(r[2, 0]) > 1.0 - 1e-9:
        raise GeometryError("rotation is at the gimbal-lock boundary (|pitch| = pi/2)")
    pitch = math.asin(-r[2, 0])
    roll = math.atan2(r[2, 1], r[2, 2])
    yaw = math.atan2(r[1, 0], r[0, 0])
    return EulerPose(roll, pitch, yaw, t[0, 3], t[1, 3], t[2, 3])


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product a @ b (apply b first, then a)."""
    return np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)


def inverse(t: np.ndarray) -> np.ndarray:
    """Closed-form SE(3) inverse: (R, p) -> (R^T, -R^T p)."""
    t = np.asarray(t, dtype=np.float64)
    r = t[:3, :3]
    out = np.eye(4)
    out[:3, :3] = r.T
    out[:3, 3] = -r.T @ t[:3, 3]
    return out


class ProjectedPoints(NamedTuple):
    """Per-point projection results; u, v only meaningful where valid."""

    uv: np.ndarray     # (N, 2) float64 pixel coordinates
    cam: np.ndarray    # (N, 3) float64 camera-frame coordinates
    valid: np.ndarray  # (N,) bool: z > Z_NEAR and 0 <= u < width, 0 <= v < height


def project_points(cloud: PointCloud, t: np.ndarray, k: CameraIntrinsics) -> ProjectedPoints:
    """Project all points through T and the pinhole model K.

    cam = T @ p; u = fx*x/z + cx, v = fy*y/z + cy. Out-of-frustum points are
    flagged invalid, never an error.
    """
    t = np.asarray(t, dtype=np.float64)
    cam = cloud.xyz @ t[:3, :3].T + t[:3, 3]
    z = cam[:, 2]
    safe_z = np.where(z > Z_NEAR, z, 1.0)
    u = k.fx * cam[:, 0] / safe_z + k.cx
    v = k.fy * cam[:, 1] / safe_z + k.cy
    valid = (z > Z_NEAR) & (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    return ProjectedPoints(np.stack([u, v], axis=1), cam, valid)


def sample_decalibration(rng_range: DecalibRange, rng_seed: int) -> np.ndarray:
    """Draw a perturbation transform with per-axis uniform angles/translations.

    Angles are uniform in [-rot_max, rot_max], translations in
    [-trans_max, trans_max]; deterministic for a fixed seed.
    """
    rng = np.random.default_rng(rng_seed)
    angles = rng.uniform(-rng_range.rot_max, rng_range.rot_max, size=3)
    trans = rng.uniform(-rng_range.trans_max, rng_range.trans_max, size=3)
    return euler_to_se3(EulerPose(angles[0], angles[1], angles[2], trans[0], trans[1], trans[2]))


# --- text serialization ------------------------------------------------------
# Extrinsics: 12 whitespace-separated numbers, row-major 3x4 (KITTI style).
# Intrinsics: key-value lines fx, fy, cx, cy, width, height.

def format_extrinsic(t: np.ndarray) -> str:
    t = np.asarray(t, dtype=np.float64)
    return " ".join(f"{v:.17g}" for v in t[:3].reshape(-1)) + "\n"


def parse_extrinsic(text: str) -> np.ndarray:
    fields = text.split()
    if len(fields) != 12:
        raise GeometryError(f"extrinsic line must have 12 numbers, got {len(fields)}: {text.strip()!r}")
    m = np.array([float(f) for f in fields], dtype=np.float64).reshape(3, 4)
    t = np.eye(4)
    t[:3] = m
    return validate_se3(t, "parsed extrinsic")


def save_extrinsic(path, t: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write(format_extrinsic(t))


def load_extrinsic(path) -> np.ndarray:
    with open(path) as f:
        return parse_extrinsic(f.read())


_INTRINSIC_KEYS = ("fx", "fy", "cx", "cy", "width", "height")


def save_intrinsics(path, k: CameraIntrinsics) -> None:
    with open(path, "w") as f:
        for key in _INTRINSIC_KEYS:
            v = getattr(k, key)
            f.write(f"{key} {v:.17g}\n" if isinstance(v, float) else f"{key} {v}\n")


def load_intrinsics(path) -> CameraIntrinsics:
    values = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition(" ")
            values[key] = val
    missing = [k for k in _INTRINSIC_KEYS if k not in values]
    if missing:
        raise GeometryError(f"intrinsics file {path} missing keys: {missing}")
    return CameraIntrinsics(
        fx=float(values["fx"]), fy=float(values["fy"]),
        cx=float(values["cx"]), cy=float(values["cy"]),
        width=int(values["width"]), height=int(values["height"]),
    )
