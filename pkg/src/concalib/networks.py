"""Pose regression and pseudo-map prediction networks.

Three small networks share one configuration:

* PoseNet: stride-2 conv encoder with residual blocks, flattened to a token
  sequence, decoded by learned queries through an attention block, mean
  pooled, then two parallel zero-initialized linear heads emit Euler
  rotation (radians) and translation (meters) through a fixed output gain.
  Zero heads make the step-0 prediction exactly zero, so the predicted
  extrinsic starts at T_init; the gain damps early updates so the predicted
  pose cannot leave the frustum before the map networks are informative.
* IntensityNet: stride-2 conv encoder, nearest-upsample decoder, 2-channel
  logits at full resolution.
* DepthNet: same family, 1 channel mapped to (0, max_depth) via a scaled
  sigmoid so the output is always a usable depth.

Inputs are raw 7-channel pseudo-images; a configurable per-channel affine
(x - offset) * scale is applied at the network boundary. Each class counts
its forward calls so single-shot inference can be asserted.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import AttentionBlock, Tensor
from .se3 import validate_se3


class ConfigError(ValueError):
    pass


_DEFAULT_OFFSETS = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
_DEFAULT_SCALES = (1.0, 1.0, 1.0, 0.2, 0.2, 0.1, 1.0 / 255.0)


@dataclass(frozen=True)
class NetworkConfig:
    input_height: int
    input_width: int
    input_channels: int = 7
    encoder_widths: tuple = (8, 16)
    query_count: int = 4
    embed_dim: int = 16
    ffn_dim: int = 32
    head_dim: int = 3
    head_gain: float = 0.1
    max_depth: float = 20.0
    input_offsets: tuple = _DEFAULT_OFFSETS
    input_scales: tuple = _DEFAULT_SCALES

    def __post_init__(self):
        ints = (self.input_height, self.input_width, self.input_channels,
                self.query_count, self.embed_dim, self.ffn_dim, self.head_dim,
                *self.encoder_widths)
        if not all(isinstance(v, int) and v > 0 for v in ints):
            raise ConfigError(f"all dimensions must be positive integers: {self}")
        if self.max_depth <= 0:
            raise ConfigError(f"max_depth must be positive, got {self.max_depth}")
        if self.head_gain <= 0:
            raise ConfigError(f"head_gain must be positive, got {self.head_gain}")
        if not self.encoder_widths:
            raise ConfigError("need at least one encoder stage")
        if self.embed_dim != self.encoder_widths[-1]:
            raise ConfigError(
                f"embed_dim {self.embed_dim} must equal the last encoder width "
                f"{self.encoder_widths[-1]}")
        down = 2 ** len(self.encoder_widths)
        if self.input_height % down or self.input_width % down:
            raise ConfigError(
                f"input {self.input_height}x{self.input_width} not divisible by "
                f"2^{len(self.encoder_widths)} stages")
        if len(self.input_offsets) != self.input_channels \
                or len(self.input_scales) != self.input_channels:
            raise ConfigError("input offsets/scales must have one entry per channel")


class PosePrediction(NamedTuple):
    rotation: Tensor     # (B,3) Euler radians roll, pitch, yaw
    translation: Tensor  # (B,3) meters


def _normal(rng, shape, scale, dtype):
    return Tensor(rng.normal(0.0, scale, size=shape), dtype=dtype)


class Conv2dLayer:
    def __init__(self, name, cin, cout, rng, kernel=3, stride=1, padding=1,
                 dtype=np.float32, zero_init=False):
        self.name = name
        self.stride, self.padding = stride, padding
        if zero_init:
            self.weight = Tensor(np.zeros((cout, cin, kernel, kernel)), dtype=dtype)
        else:
            fan_in = cin * kernel * kernel
            self.weight = _normal(rng, (cout, cin, kernel, kernel),
                                  math.sqrt(2.0 / fan_in), dtype)
        self.bias = Tensor(np.zeros(cout), dtype=dtype)

    def __call__(self, x):
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def params(self):
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.bias", self.bias)]


class LinearLayer:
    def __init__(self, name, fin, fout, rng, dtype=np.float32, zero_init=False):
        self.name = name
        if zero_init:
            self.weight = Tensor(np.zeros((fin, fout)), dtype=dtype)
        else:
            self.weight = _normal(rng, (fin, fout), math.sqrt(1.0 / fin), dtype)
        self.bias = Tensor(np.zeros(fout), dtype=dtype)

    def __call__(self, x):
        return ad.linear(x, self.weight, self.bias)

    def params(self):
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.bias", self.bias)]


class ResidualBlock:
    """Two 3x3 convs with a skip connection, width preserved."""

    def __init__(self, name, channels, rng, dtype=np.float32):
        self.conv1 = Conv2dLayer(f"{name}.conv1", channels, channels, rng, dtype=dtype)
        self.conv2 = Conv2dLayer(f"{name}.conv2", channels, channels, rng, dtype=dtype)

    def __call__(self, x):
        return ad.relu(ad.add(x, self.conv2(ad.relu(self.conv1(x)))))

    def params(self):
        return self.conv1.params() + self.conv2.params()


def _normalize_input(batch: np.ndarray, config: NetworkConfig, dtype) -> Tensor:
    arr = np.asarray(batch)
    if arr.ndim == 3:
        arr = arr[None]
    expect = (config.input_channels, config.input_height, config.input_width)
    if arr.ndim != 4 or arr.shape[1:] != expect:
        raise ad.ShapeError(f"network input must be (B,)+{expect}, got {arr.shape}")
    offsets = np.asarray(config.input_offsets, dtype=np.float64).reshape(1, -1, 1, 1)
    scales = np.asarray(config.input_scales, dtype=np.float64).reshape(1, -1, 1, 1)
    return Tensor((arr.astype(np.float64) - offsets) * scales, dtype=dtype)


class _CountedForward:
    forward_calls = 0

    @classmethod
    def reset_counter(cls):
        cls.forward_calls = 0

    @classmethod
    def _count(cls):
        cls.forward_calls += 1


class PoseNet(_CountedForward):
    forward_calls = 0

    def __init__(self, config: NetworkConfig, rng, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        c_prev = config.input_channels
        self.stages = []
        for i, width in enumerate(config.encoder_widths):
            down = Conv2dLayer(f"posenet.stage{i}.down", c_prev, width, rng,
                               stride=2, dtype=dtype)
            res = ResidualBlock(f"posenet.stage{i}.res", width, rng, dtype=dtype)
            self.stages.append((down, res))
            c_prev = width
        c = config.embed_dim
        self.queries = _normal(rng, (config.query_count, c), 1.0 / math.sqrt(c), dtype)
        self.attention = AttentionBlock(c, config.ffn_dim, rng)
        for _, p in self.attention.params():
            p.data = p.data.astype(dtype)
        self.head_rot = LinearLayer("posenet.head_rot", c, config.head_dim, rng,
                                    dtype=dtype, zero_init=True)
        self.head_trans = LinearLayer("posenet.head_trans", c, config.head_dim, rng,
                                      dtype=dtype, zero_init=True)

    def __call__(self, pseudo_batch) -> PosePrediction:
        type(self)._count()
        x = _normalize_input(pseudo_batch, self.config, self.dtype)
        batch = x.data.shape[0]
        for down, res in self.stages:
            x = res(ad.relu(down(x)))
        c = self.config.embed_dim
        n1 = x.data.shape[2] * x.data.shape[3]
        tokens = ad.transpose_last_two(ad.reshape(x, (batch, c, n1)))  # (B,N1,C)
        queries = ad.tile_batch(self.queries, batch)                   # (B,N2,C)
        decoded = self.attention(queries, tokens)
        pooled = ad.tmean(decoded, axis=1)                             # (B,C)
        # fixed output gain: keeps early zero-init head updates from throwing
        # the predicted pose out of the frustum; the heads stay linear and
        # the step-0 output stays exactly zero
        gain = self.config.head_gain
        return PosePrediction(ad.scalar_mul(self.head_rot(pooled), gain),
                              ad.scalar_mul(self.head_trans(pooled), gain))

    def params(self):
        out = []
        for down, res in self.stages:
            out += down.params() + res.params()
        out.append(("posenet.queries", self.queries))
        out += [(f"posenet.attention.{n}", p) for n, p in self.attention.params()]
        out += self.head_rot.params() + self.head_trans.params()
        return out


class _EncoderDecoderNet(_CountedForward):
    """Shared encoder-decoder body for the pseudo-map networks."""

    out_channels = 1
    prefix = "net"

    def __init__(self, config: NetworkConfig, rng, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        name = self.prefix
        c_prev = config.input_channels
        self.encoder = []
        for i, width in enumerate(config.encoder_widths):
            self.encoder.append(Conv2dLayer(f"{name}.enc{i}", c_prev, width, rng,
                                            stride=2, dtype=dtype))
            c_prev = width
        up_widths = list(reversed(config.encoder_widths[:-1])) or [config.encoder_widths[0]]
        if len(up_widths) < len(config.encoder_widths):
            up_widths.append(config.encoder_widths[0])
        self.decoder = []
        for i, width in enumerate(up_widths):
            self.decoder.append(Conv2dLayer(f"{name}.dec{i}", c_prev, width, rng,
                                            dtype=dtype))
            c_prev = width
        self.head = Conv2dLayer(f"{name}.head", c_prev, self.out_channels, rng,
                                dtype=dtype)

    def _body(self, pseudo_batch) -> Tensor:
        type(self)._count()
        x = _normalize_input(pseudo_batch, self.config, self.dtype)
        for conv in self.encoder:
            x = ad.relu(conv(x))
        for conv in self.decoder:
            x = ad.relu(conv(ad.nearest_upsample2x(x)))
        return self.head(x)

    def params(self):
        out = []
        for conv in self.encoder + self.decoder + [self.head]:
            out += conv.params()
        return out


class IntensityNet(_EncoderDecoderNet):
    """Full-resolution 2-channel binary-intensity logits."""

    forward_calls = 0
    out_channels = 2
    prefix = "intensitynet"

    def __call__(self, pseudo_batch) -> Tensor:
        return self._body(pseudo_batch)


class DepthNet(_EncoderDecoderNet):
    """Full-resolution 1-channel depth in (0, max_depth) meters."""

    forward_calls = 0
    out_channels = 1
    prefix = "depthnet"

    def __call__(self, pseudo_batch) -> Tensor:
        raw = self._body(pseudo_batch)
        return ad.scalar_mul(ad.sigmoid(raw), self.config.max_depth)


def reset_forward_counters():
    for cls in (PoseNet, IntensityNet, DepthNet):
        cls.forward_calls = 0


def param_count(net) -> int:
    return int(sum(p.data.size for _, p in net.params()))


def state_dict(net) -> dict:
    return {name: p.data.astype(np.float32) for name, p in net.params()}


def load_state(net, tensors: dict) -> None:
    """Copy named tensors into the network, requiring an exact name match."""
    own = dict(net.params())
    missing = sorted(set(own) - set(tensors))
    extra = sorted(set(tensors) - set(own))
    if missing or extra:
        raise ValueError(
            f"parameter names do not match: missing {missing}, unexpected {extra}")
    for name, param in own.items():
        arr = np.asarray(tensors[name])
        if arr.shape != param.data.shape:
            raise ValueError(
                f"{name}: shape {arr.shape} does not match {param.data.shape}")
        param.data = arr.astype(param.data.dtype)


# --- differentiable pose-to-extrinsic ----------------------------------------

def _rot_and_derivs(roll, pitch, yaw):
    """R = Rz(yaw) @ Ry(pitch) @ Rx(roll) and its three angle derivatives."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    drx = np.array([[0, 0, 0], [0, -sr, -cr], [0, cr, -sr]])
    dry = np.array([[-sp, 0, cp], [0, 0, 0], [-cp, 0, -sp]])
    drz = np.array([[-sy, -cy, 0], [cy, -sy, 0], [0, 0, 0]])
    return (rz @ ry @ rx,
            rz @ ry @ drx,   # d/d roll
            rz @ dry @ rx,   # d/d pitch
            drz @ ry @ rx)   # d/d yaw


def pose_to_tpred(pred: PosePrediction, t_init: np.ndarray, row: int = 0) -> Tensor:
    """T_pred = E(pred) @ T_init, differentiable in the six pose scalars.

    pred holds batched (B,3) rotation and translation; row selects the
    sample. The backward pass uses the analytic derivative of the Euler
    rotation, accumulated into that row only.
    """
    validate_se3(t_init)
    rot_d, trans_d = pred.rotation.data, pred.translation.data
    if rot_d.ndim != 2 or rot_d.shape[1] != 3 or rot_d.shape != trans_d.shape:
        raise ad.ShapeError(
            f"prediction must be (B,3)+(B,3), got {rot_d.shape} and {trans_d.shape}")
    if not (0 <= row < rot_d.shape[0]):
        raise ad.ShapeError(f"row {row} out of range for batch {rot_d.shape[0]}")
    roll, pitch, yaw = (float(v) for v in rot_d[row])
    r, d_roll, d_pitch, d_yaw = _rot_and_derivs(roll, pitch, yaw)

    delta = np.eye(4)
    delta[:3, :3] = r
    delta[:3, 3] = trans_d[row]
    t_init64 = np.asarray(t_init, dtype=np.float64)
    # transforms stay float64: a zero prediction must reproduce T_init bitwise
    out = ad._make("pose_to_tpred", delta @ t_init64)

    tape = ad.active_tape()
    if tape is not None:
        i_rot, i_trans = ad._nid(tape, pred.rotation), ad._nid(tape, pred.translation)
        angle_derivs = (d_roll, d_pitch, d_yaw)
        b = rot_d.shape[0]

        def backward(g, acc):
            g64 = g.astype(np.float64)
            g_rot = np.zeros((b, 3))
            g_trans = np.zeros((b, 3))
            for j, dr in enumerate(angle_derivs):
                d_delta = np.zeros((4, 4))
                d_delta[:3, :3] = dr
                g_rot[row, j] = np.sum(g64 * (d_delta @ t_init64))
            # translation k only shifts output row k by t_init's bottom row
            g_trans[row, :] = g64[:3, :] @ t_init64[3, :]
            acc(i_rot, g_rot.astype(rot_d.dtype))
            acc(i_trans, g_trans.astype(rot_d.dtype))

        tape.record(out, backward)
    return out
