"""Appearance- and geometric-consistency objectives.

Points project under two transforms: the prediction-dependent T_pred (a
tape value, so coordinates carry gradients back to the six pose scalars)
and the fixed ground truth. The predicted intensity logits and depth map
are bilinear-sampled at both coordinate sets; sampled logits are scored by
softmax cross-entropy against the binary intensity label, sampled depths
by L1 against the ground-truth depth in meters. Each branch averages over
its own valid points; a branch with no valid point contributes zero and is
flagged. The ground-truth branch treats its coordinates as constants, so
it trains only the map networks, never the pose.

total = appearance_weight * L_I + lambda_geo * L_D (both weights default 1).
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tensor
from .networks import pose_to_tpred
from .pseudoimage import CalibSample, PointLabels, build_pseudo_image
from .se3 import CameraIntrinsics, PointCloud, Z_NEAR


class ProjectedCoords(NamedTuple):
    uv: Tensor            # (M,2) tape values for the valid subset
    valid: np.ndarray     # (N,) bool over the original points
    indices: np.ndarray   # (M,) original indices of the valid subset


def project_differentiable(cloud: PointCloud, t_pred: Tensor,
                           k: CameraIntrinsics) -> ProjectedCoords:
    """Pinhole projection through a tape-valued transform.

    The validity mask comes from the detached forward values; gradients flow
    only through the (u,v) coordinates of points that passed the mask.
    """
    t = t_pred.data.astype(np.float64)
    xyz = cloud.xyz
    cam = xyz @ t[:3, :3].T + t[:3, 3]
    z = cam[:, 2]
    safe_z = np.where(z > Z_NEAR, z, 1.0)
    u = k.fx * cam[:, 0] / safe_z + k.cx
    v = k.fy * cam[:, 1] / safe_z + k.cy
    valid = (z > Z_NEAR) & (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    indices = np.flatnonzero(valid)

    ph = np.column_stack([xyz[indices], np.ones(len(indices))])  # (M,4)
    cx_, cy_, cz = cam[indices, 0], cam[indices, 1], cam[indices, 2]
    uv = np.column_stack([u[indices], v[indices]]).astype(t_pred.data.dtype)
    out = ad._make("project_differentiable", uv)

    tape = ad.active_tape()
    if tape is not None:
        it = ad._nid(tape, t_pred)

        def backward(g, acc):
            g64 = g.astype(np.float64)
            grad_t = np.zeros((4, 4))
            if len(indices):
                gu, gv = g64[:, 0], g64[:, 1]
                grad_t[0, :] = (gu * k.fx / cz) @ ph
                grad_t[1, :] = (gv * k.fy / cz) @ ph
                grad_t[2, :] = (-(gu * k.fx * cx_ + gv * k.fy * cy_) / cz ** 2) @ ph
            acc(it, grad_t.astype(t_pred.data.dtype))

        tape.record(out, backward)
    return ProjectedCoords(out, valid, indices)


@dataclass(frozen=True)
class LossBreakdown:
    loss: Tensor                  # scalar tape value for backward
    appearance: float             # L_I
    geometric: float              # L_D
    total: float                  # appearance_weight*L_I + lambda_geo*L_D
    count_pred: int               # valid points in the prediction branch
    count_gt: int                 # valid points in the ground-truth branch
    empty_pred_branch: bool
    empty_gt_branch: bool


def _zero_scalar(dtype) -> Tensor:
    return Tensor(np.zeros(()), dtype=dtype)


def _branch_ce(logits_chw: Tensor, coords: Tensor, labels01: np.ndarray) -> Tensor:
    sampled = ad.bilinear_sample(logits_chw, coords)  # (M,2)
    return ad.softmax_cross_entropy(sampled, labels01)


def _branch_l1(depth_chw: Tensor, coords: Tensor, gt_depth: np.ndarray) -> Tensor:
    sampled = ad.bilinear_sample(depth_chw, coords)       # (M,1)
    flat = ad.reshape(sampled, (len(gt_depth),))
    target = Tensor(gt_depth, dtype=depth_chw.data.dtype)
    return ad.tmean(ad.absolute(ad.sub(flat, target)))


def appearance_loss(intensity_logits: Tensor, coords_pred: ProjectedCoords,
                    coords_gt: Tensor, gt_indices: np.ndarray,
                    labels: PointLabels):
    """Cross-entropy of sampled logits in both branches; returns (Tensor, counts)."""
    dtype = intensity_logits.data.dtype
    n_pred, n_gt = len(coords_pred.indices), len(gt_indices)
    terms = []
    if n_pred:
        terms.append(_branch_ce(intensity_logits, coords_pred.uv,
                                labels.binary_intensity[coords_pred.indices]))
    if n_gt:
        terms.append(_branch_ce(intensity_logits, coords_gt,
                                labels.binary_intensity[gt_indices]))
    out = terms[0] if terms else _zero_scalar(dtype)
    for t in terms[1:]:
        out = ad.add(out, t)
    return out, n_pred, n_gt


def geometric_loss(depth_map: Tensor, coords_pred: ProjectedCoords,
                   coords_gt: Tensor, gt_indices: np.ndarray,
                   labels: PointLabels):
    """L1 depth error in meters in both branches; returns (Tensor, counts)."""
    dtype = depth_map.data.dtype
    n_pred, n_gt = len(coords_pred.indices), len(gt_indices)
    terms = []
    if n_pred:
        terms.append(_branch_l1(depth_map, coords_pred.uv,
                                labels.gt_depth[coords_pred.indices]))
    if n_gt:
        terms.append(_branch_l1(depth_map, coords_gt,
                                labels.gt_depth[gt_indices]))
    out = terms[0] if terms else _zero_scalar(dtype)
    for t in terms[1:]:
        out = ad.add(out, t)
    return out, n_pred, n_gt


def sample_loss(sample: CalibSample, posenet, intensitynet, depthnet,
                lambda_geo: float = 1.0, appearance_weight: float = 1.0,
                pseudo_batch=None, batch_row: int = 0,
                pose_pred=None, logits_batch=None, depth_batch=None) -> LossBreakdown:
    """Consistency loss for one sample.

    When the caller already ran the networks on a stacked batch it passes
    the batch outputs and this sample's row; otherwise the networks run here
    on a single-sample batch.
    """
    if sample.labels is None:
        raise ValueError("sample has no labels attached; run make_labels first")
    labels = sample.labels
    if pseudo_batch is None:
        pseudo_batch = build_pseudo_image(sample).channels[None]
    if pose_pred is None:
        pose_pred = posenet(pseudo_batch)
    if logits_batch is None:
        logits_batch = intensitynet(pseudo_batch)
    if depth_batch is None:
        depth_batch = depthnet(pseudo_batch)

    t_pred = pose_to_tpred(pose_pred, sample.t_init, row=batch_row)
    coords_pred = project_differentiable(sample.cloud, t_pred, sample.intrinsics)

    gt_indices = np.flatnonzero(labels.valid_gt)
    coords_gt = Tensor(labels.gt_pixel[gt_indices], dtype=logits_batch.data.dtype)

    logits_chw = ad.take_batch(logits_batch, batch_row)
    depth_chw = ad.take_batch(depth_batch, batch_row)

    li, n_pred, n_gt = appearance_loss(logits_chw, coords_pred, coords_gt,
                                       gt_indices, labels)
    ld, _, _ = geometric_loss(depth_chw, coords_pred, coords_gt,
                              gt_indices, labels)

    li_val, ld_val = float(li.data), float(ld.data)
    for name, val in (("appearance", li_val), ("geometric", ld_val)):
        if not np.isfinite(val):
            raise NumericError(f"{name} loss is non-finite: {val}")

    total = ad.add(ad.scalar_mul(li, appearance_weight), ad.scalar_mul(ld, lambda_geo))
    return LossBreakdown(
        loss=total,
        appearance=li_val,
        geometric=ld_val,
        total=float(total.data),
        count_pred=n_pred,
        count_gt=n_gt,
        empty_pred_branch=n_pred == 0,
        empty_gt_branch=n_gt == 0,
    )


def batch_loss(samples, posenet, intensitynet, depthnet,
               lambda_geo: float = 1.0, appearance_weight: float = 1.0) -> LossBreakdown:
    """Mean consistency loss over a list of samples, one network pass each."""
    if not samples:
        raise ValueError("batch_loss needs at least one sample")
    pseudo_batch = np.stack([build_pseudo_image(s).channels for s in samples])
    pose_pred = posenet(pseudo_batch)
    logits_batch = intensitynet(pseudo_batch)
    depth_batch = depthnet(pseudo_batch)

    parts = [sample_loss(s, posenet, intensitynet, depthnet,
                         lambda_geo, appearance_weight,
                         pseudo_batch=pseudo_batch, batch_row=i,
                         pose_pred=pose_pred, logits_batch=logits_batch,
                         depth_batch=depth_batch)
             for i, s in enumerate(samples)]

    total = parts[0].loss
    for p in parts[1:]:
        total = ad.add(total, p.loss)
    total = ad.scalar_mul(total, 1.0 / len(parts))
    return LossBreakdown(
        loss=total,
        appearance=float(np.mean([p.appearance for p in parts])),
        geometric=float(np.mean([p.geometric for p in parts])),
        total=float(total.data),
        count_pred=sum(p.count_pred for p in parts),
        count_gt=sum(p.count_gt for p in parts),
        empty_pred_branch=any(p.empty_pred_branch for p in parts),
        empty_gt_branch=any(p.empty_gt_branch for p in parts),
    )
