"""Pseudo-image construction and per-point supervision labels.

The network input is a 7-channel single-precision grid: channels 0-2 hold
the RGB image scaled to [0, 1], channels 3-5 the camera-frame x, y, z of
the LiDAR point rasterized into each pixel (meters, under the initial
extrinsic), and channel 6 that point's raw intensity in [0, 255]. Cells
with no point are zero in channels 3-6.

Rasterization is deterministic: when several points land in one pixel the
one with the smallest camera-frame depth wins, ties broken by the lower
point index. Intensity supervision labels binarize with a strict
greater-than comparison; the input channel keeps the raw value.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .se3 import CameraIntrinsics, PointCloud, project_points, validate_se3


@dataclass(frozen=True)
class PointLabels:
    """Per-point supervision targets from the ground-truth extrinsic."""

    binary_intensity: np.ndarray  # (N,) uint8 in {0,1}
    gt_depth: np.ndarray          # (N,) float64 camera z under T_gt
    gt_pixel: np.ndarray          # (N,2) float64 continuous (u,v) under T_gt
    valid_gt: np.ndarray          # (N,) bool frustum flag under T_gt


@dataclass(frozen=True)
class CalibSample:
    """One training example: image, cloud, intrinsics, and the two extrinsics."""

    rgb: np.ndarray               # (H,W,3) float in [0,1] or uint8
    cloud: PointCloud
    intrinsics: CameraIntrinsics
    t_gt: np.ndarray              # (4,4) LiDAR-to-camera ground truth
    t_init: np.ndarray            # (4,4) decalibrated starting extrinsic
    labels: Optional[PointLabels] = None

    def __post_init__(self):
        validate_se3(self.t_gt)
        validate_se3(self.t_init)
        h, w = self.rgb.shape[:2]
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError(f"rgb must be (H,W,3), got {self.rgb.shape}")
        if (h, w) != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(
                f"rgb is {h}x{w} but intrinsics expect "
                f"{self.intrinsics.height}x{self.intrinsics.width}")

    def with_labels(self, labels: PointLabels) -> "CalibSample":
        return replace(self, labels=labels)


@dataclass(frozen=True)
class PseudoImage:
    """7xHxW float32 network input grid."""

    channels: np.ndarray

    def __post_init__(self):
        c = self.channels
        if c.ndim != 3 or c.shape[0] != 7:
            raise ValueError(f"pseudo-image must be (7,H,W), got {c.shape}")
        if c.dtype != np.float32:
            raise ValueError(f"pseudo-image must be float32, got {c.dtype}")


def rgb_to_unit(rgb: np.ndarray) -> np.ndarray:
    """Return the image as float in [0,1]; uint8 input is scaled by 1/255."""
    if rgb.dtype == np.uint8:
        return rgb.astype(np.float64) / 255.0
    return np.asarray(rgb, dtype=np.float64)


def build_pseudo_image(sample: CalibSample) -> PseudoImage:
    k = sample.intrinsics
    channels = np.zeros((7, k.height, k.width), dtype=np.float32)
    channels[0:3] = rgb_to_unit(sample.rgb).transpose(2, 0, 1)

    proj = project_points(sample.cloud, sample.t_init, k)
    if not proj.valid.any():
        return PseudoImage(channels)

    idx = np.flatnonzero(proj.valid)
    uv = proj.uv[idx]
    cam = proj.cam[idx]
    px = np.floor(uv[:, 0]).astype(np.intp)
    py = np.floor(uv[:, 1]).astype(np.intp)

    # Write worst-first so the last write per cell is the nearest point,
    # equal depths resolved toward the lower original index.
    order = np.lexsort((-idx, -cam[:, 2]))
    px, py = px[order], py[order]
    cam = cam[order]
    intensity = sample.cloud.intensity[idx][order]

    channels[3, py, px] = cam[:, 0]
    channels[4, py, px] = cam[:, 1]
    channels[5, py, px] = cam[:, 2]
    channels[6, py, px] = intensity
    return PseudoImage(channels)


def binarize_intensity(cloud: PointCloud, threshold: float) -> np.ndarray:
    """1 where intensity is strictly greater than the threshold, else 0."""
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    return (cloud.intensity > threshold).astype(np.uint8)


def make_labels(sample: CalibSample, threshold: float) -> PointLabels:
    proj = project_points(sample.cloud, sample.t_gt, sample.intrinsics)
    return PointLabels(
        binary_intensity=binarize_intensity(sample.cloud, threshold),
        gt_depth=proj.cam[:, 2].copy(),
        gt_pixel=proj.uv.copy(),
        valid_gt=proj.valid.copy(),
    )
