"""Training loop, single-shot calibration inference, and error metrics.

SGD with momentum and decoupled weight decay under a cosine learning-rate
schedule. Every run is a deterministic function of the dataset, the two
configs, and the seed: batches cycle the dataset in order and each visit
redraws the sample's decalibration from a per-epoch seed schedule.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .autodiff import NumericError, Tape
from .checkpoint import load_checkpoint, save_checkpoint
from .datagen import decalib_seed, decalibrate
from .losses import LossBreakdown, batch_loss
from .networks import (
    DepthNet, IntensityNet, NetworkConfig, PoseNet, load_state, pose_to_tpred,
    state_dict,
)
from .pseudoimage import CalibSample, build_pseudo_image
from .se3 import DecalibRange, compose, euler_from_se3, inverse


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    total_iterations: int
    batch_size: int = 4
    initial_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0001
    lambda_geo: float = 1.0
    appearance_weight: float = 1.0
    decalib_trans: float = 0.10       # meters
    decalib_rot: float = 0.017453     # radians (1 degree)
    intensity_threshold: float = 30.0
    seed: int = 0
    checkpoint_interval: int = 0      # 0 writes only the final checkpoint

    def __post_init__(self):
        if self.total_iterations <= 0:
            raise ValueError("total_iterations must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    @property
    def decalib_range(self) -> DecalibRange:
        return DecalibRange(self.decalib_trans, self.decalib_rot)


def cosine_lr(cfg: TrainConfig, step: int) -> float:
    """initial_lr * 0.5 * (1 + cos(pi * step / total)); 0 at step = total."""
    return cfg.initial_lr * 0.5 * (1.0 + math.cos(math.pi * step / cfg.total_iterations))


class SGDMomentum:
    """v = momentum*v + g; p -= lr*v + lr*weight_decay*p (decoupled decay)."""

    def __init__(self, params, momentum: float, weight_decay: float):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, grads: dict, lr: float) -> None:
        for name, p in self.params:
            g = grads[p.node_id]
            v = self.velocity[name]
            v[...] = self.momentum * v + g
            p.data -= lr * v + lr * self.weight_decay * p.data


_LOG_HEADER = "step,appearance,geometric,total,count_pred,count_gt"


def format_log_row(step: int, bd: LossBreakdown) -> str:
    return (f"{step},{bd.appearance:.10g},{bd.geometric:.10g},"
            f"{bd.total:.10g},{bd.count_pred},{bd.count_gt}")


@dataclass
class TrainResult:
    posenet: PoseNet
    intensitynet: IntensityNet
    depthnet: DepthNet
    breakdowns: List[LossBreakdown]
    log_lines: List[str]
    checkpoint_path: Optional[str]


def combined_state(posenet, intensitynet, depthnet) -> dict:
    state = {}
    for net in (posenet, intensitynet, depthnet):
        state.update(state_dict(net))
    return state


def train(dataset: Sequence[CalibSample], cfg: TrainConfig,
          net_cfg: NetworkConfig, out_dir: Optional[str] = None,
          progress: Optional[Callable[[int, LossBreakdown], None]] = None) -> TrainResult:
    """Run the full loop; checkpoints land in out_dir when given."""
    if not dataset:
        raise ValueError("train needs a non-empty dataset")
    rng = np.random.default_rng(cfg.seed)
    posenet = PoseNet(net_cfg, rng)
    intensitynet = IntensityNet(net_cfg, rng)
    depthnet = DepthNet(net_cfg, rng)
    params = (list(posenet.params()) + list(intensitynet.params())
              + list(depthnet.params()))
    opt = SGDMomentum(params, cfg.momentum, cfg.weight_decay)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    n = len(dataset)
    breakdowns: List[LossBreakdown] = []
    log_lines = [_LOG_HEADER]
    checkpoint_path = None

    for step in range(cfg.total_iterations):
        batch = []
        for j in range(cfg.batch_size):
            cursor = step * cfg.batch_size + j
            epoch, idx = divmod(cursor, n)
            batch.append(decalibrate(dataset[idx], cfg.decalib_range,
                                     decalib_seed(cfg.seed, epoch, idx),
                                     cfg.intensity_threshold))
        try:
            with Tape() as tape:
                bd = batch_loss(batch, posenet, intensitynet, depthnet,
                                lambda_geo=cfg.lambda_geo,
                                appearance_weight=cfg.appearance_weight)
        except NumericError as e:
            raise TrainingError(f"aborted at step {step}: {e}") from e
        if not np.isfinite(bd.total):
            raise TrainingError(f"aborted at step {step}: non-finite loss {bd}")
        grads = tape.backward(bd.loss)
        opt.step(grads, cosine_lr(cfg, step))

        breakdowns.append(bd)
        log_lines.append(format_log_row(step, bd))
        if progress is not None:
            progress(step, bd)
        if (out_dir is not None and cfg.checkpoint_interval > 0
                and (step + 1) % cfg.checkpoint_interval == 0
                and step + 1 < cfg.total_iterations):
            save_checkpoint(os.path.join(out_dir, f"checkpoint_{step + 1:06d}.rcal"),
                            combined_state(posenet, intensitynet, depthnet))

    if out_dir is not None:
        checkpoint_path = os.path.join(out_dir, "checkpoint_final.rcal")
        save_checkpoint(checkpoint_path,
                        combined_state(posenet, intensitynet, depthnet))
        with open(os.path.join(out_dir, "train_log.csv"), "w") as f:
            f.write("\n".join(log_lines) + "\n")
    return TrainResult(posenet, intensitynet, depthnet, breakdowns,
                       log_lines, checkpoint_path)


def load_posenet(checkpoint_path, net_cfg: NetworkConfig) -> PoseNet:
    """Build a PoseNet from only the posenet.* tensors of a checkpoint."""
    tensors = load_checkpoint(checkpoint_path)
    posenet = PoseNet(net_cfg, np.random.default_rng(0))
    load_state(posenet, {k: v for k, v in tensors.items()
                         if k.startswith("posenet.")})
    return posenet


def predict_transform(posenet: PoseNet, sample: CalibSample) -> np.ndarray:
    """One forward pass: pseudo-image under T_init -> corrected transform."""
    pseudo = build_pseudo_image(sample).channels[None]
    pred = posenet(pseudo)
    return pose_to_tpred(pred, sample.t_init).data.copy()


def calibrate(checkpoint_path, sample: CalibSample,
              net_cfg: NetworkConfig) -> np.ndarray:
    """Single-shot correction of sample.t_init.

    Only pose weights are loaded; the map heads are neither loaded nor run.
    The single-forward contract is asserted on the instrumented counters.
    """
    posenet = load_posenet(checkpoint_path, net_cfg)
    before = (PoseNet.forward_calls, IntensityNet.forward_calls,
              DepthNet.forward_calls)
    t_pred = predict_transform(posenet, sample)
    after = (PoseNet.forward_calls, IntensityNet.forward_calls,
             DepthNet.forward_calls)
    if after != (before[0] + 1, before[1], before[2]):
        raise TrainingError(
            f"single-shot contract violated: forward counters {before} -> {after}")
    return t_pred


@dataclass(frozen=True)
class CalibErrorReport:
    """Mean absolute calibration errors: translation in cm, rotation in degrees."""

    x_cm: float
    y_cm: float
    z_cm: float
    trans_mean_cm: float
    roll_deg: float
    pitch_deg: float
    yaw_deg: float
    rot_mean_deg: float
    sample_count: int

    def rows(self):
        return [("X (cm)", self.x_cm), ("Y (cm)", self.y_cm),
                ("Z (cm)", self.z_cm), ("trans mean (cm)", self.trans_mean_cm),
                ("roll (deg)", self.roll_deg), ("pitch (deg)", self.pitch_deg),
                ("yaw (deg)", self.yaw_deg), ("rot mean (deg)", self.rot_mean_deg)]


def transform_errors(t_pred: np.ndarray, t_gt: np.ndarray) -> np.ndarray:
    """Six absolute errors (x,y,z cm, roll,pitch,yaw deg) of the left error pose."""
    err = euler_from_se3(compose(t_pred, inverse(t_gt)))
    return np.abs([err.tx * 100, err.ty * 100, err.tz * 100,
                   math.degrees(err.roll), math.degrees(err.pitch),
                   math.degrees(err.yaw)])


_EVAL_HEADER = "sample,x_cm,y_cm,z_cm,roll_deg,pitch_deg,yaw_deg"


def evaluate_posenet(posenet: PoseNet, samples: Sequence[CalibSample],
                     log_path=None) -> CalibErrorReport:
    if not samples:
        raise ValueError("evaluate needs a non-empty dataset")
    errors = np.empty((len(samples), 6))
    lines = [_EVAL_HEADER]
    for i, sample in enumerate(samples):
        t_pred = predict_transform(posenet, sample)
        errors[i] = transform_errors(t_pred, sample.t_gt)
        lines.append(f"{i}," + ",".join(f"{v:.10g}" for v in errors[i]))
    if log_path is not None:
        with open(log_path, "w") as f:
            f.write("\n".join(lines) + "\n")
    mean = errors.mean(axis=0)
    return CalibErrorReport(
        x_cm=mean[0], y_cm=mean[1], z_cm=mean[2],
        trans_mean_cm=float(mean[:3].mean()),
        roll_deg=mean[3], pitch_deg=mean[4], yaw_deg=mean[5],
        rot_mean_deg=float(mean[3:].mean()),
        sample_count=len(samples))


def evaluate(checkpoint_path, samples: Sequence[CalibSample],
             net_cfg: NetworkConfig, log_path=None) -> CalibErrorReport:
    return evaluate_posenet(load_posenet(checkpoint_path, net_cfg), samples,
                            log_path)
