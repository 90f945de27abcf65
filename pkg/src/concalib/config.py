"""Flat key=value run configuration with documented defaults.

One file drives a whole run: optimizer settings, camera model, network
widths, and scene-generation knobs. Lines hold `key = value`; `#` starts a
comment; unknown and duplicate keys are rejected. Command-line overrides
are applied after the file with the same validation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .datagen import SyntheticSceneSpec
from .networks import NetworkConfig
from .se3 import CameraIntrinsics, parse_extrinsic
from .training import TrainConfig


class ConfigFileError(ValueError):
    pass


_IDENTITY_EXTRINSIC = (1.0, 0.0, 0.0, 0.0,
                       0.0, 1.0, 0.0, 0.0,
                       0.0, 0.0, 1.0, 0.0)


@dataclass(frozen=True)
class RunConfig:
    # optimizer and loop
    total_iterations: int = 2000
    batch_size: int = 4
    initial_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0001
    lambda_geo: float = 1.0
    appearance_weight: float = 1.0
    decalib_trans: float = 0.10
    decalib_rot: float = 0.017453
    intensity_threshold: float = 30.0
    seed: int = 0
    checkpoint_interval: int = 0
    # camera model (shared by rendering and the network input size)
    fx: float = 40.0
    fy: float = 40.0
    cx: float = 32.0
    cy: float = 16.0
    image_width: int = 64
    image_height: int = 32
    # network capacities
    encoder_widths: Tuple[int, ...] = (8, 16)
    query_count: int = 4
    embed_dim: int = 16
    ffn_dim: int = 32
    head_gain: float = 0.1
    max_depth: float = 20.0
    # synthetic scene generation
    points_per_scene: int = 384
    box_count: int = 3
    pole_count: int = 2
    ground: bool = True
    intensity_noise: float = 5.0
    extrinsic_gt: Tuple[float, ...] = _IDENTITY_EXTRINSIC

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                                width=self.image_width, height=self.image_height)

    def extrinsic_matrix(self) -> np.ndarray:
        return parse_extrinsic(" ".join(f"{v!r}" for v in self.extrinsic_gt))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            total_iterations=self.total_iterations, batch_size=self.batch_size,
            initial_lr=self.initial_lr, momentum=self.momentum,
            weight_decay=self.weight_decay, lambda_geo=self.lambda_geo,
            appearance_weight=self.appearance_weight,
            decalib_trans=self.decalib_trans, decalib_rot=self.decalib_rot,
            intensity_threshold=self.intensity_threshold, seed=self.seed,
            checkpoint_interval=self.checkpoint_interval)

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            input_height=self.image_height, input_width=self.image_width,
            encoder_widths=self.encoder_widths, query_count=self.query_count,
            embed_dim=self.embed_dim, ffn_dim=self.ffn_dim,
            head_gain=self.head_gain, max_depth=self.max_depth)

    def scene_spec(self, seed: int) -> SyntheticSceneSpec:
        return SyntheticSceneSpec(
            seed=seed, intrinsics=self.intrinsics(),
            extrinsic=self.extrinsic_matrix(),
            points_per_scene=self.points_per_scene, ground=self.ground,
            box_count=self.box_count, pole_count=self.pole_count,
            intensity_noise=self.intensity_noise)


_DOCS = {
    "total_iterations": "number of optimizer steps",
    "batch_size": "samples per step",
    "initial_lr": "starting learning rate of the cosine schedule",
    "momentum": "SGD momentum coefficient",
    "weight_decay": "decoupled weight decay coefficient",
    "lambda_geo": "weight of the geometric (depth) consistency term",
    "appearance_weight": "weight of the appearance (intensity) consistency term",
    "decalib_trans": "per-axis training perturbation bound, meters",
    "decalib_rot": "per-axis training perturbation bound, radians",
    "intensity_threshold": "binarization threshold on the [0,255] scale",
    "seed": "master seed for init, batching, and perturbations",
    "checkpoint_interval": "steps between checkpoints; 0 keeps only the final",
    "fx": "focal length x, pixels",
    "fy": "focal length y, pixels",
    "cx": "principal point x, pixels",
    "cy": "principal point y, pixels",
    "image_width": "image width in pixels (also the network input width)",
    "image_height": "image height in pixels (also the network input height)",
    "encoder_widths": "comma-separated channel widths, one per stride-2 stage",
    "query_count": "learned pose queries in the attention block",
    "embed_dim": "token width; must equal the last encoder width",
    "head_gain": "fixed scale on the pose head outputs; damps early updates",
    "ffn_dim": "hidden width of the attention feed-forward layer",
    "max_depth": "depth predictions are bounded to (0, max_depth) meters",
    "points_per_scene": "LiDAR points sampled per synthetic scene",
    "box_count": "boxes per synthetic scene",
    "pole_count": "vertical poles per synthetic scene",
    "ground": "include the ground slab (true/false)",
    "intensity_noise": "uniform intensity jitter half-width on [0,255]",
    "extrinsic_gt": "true lidar-to-camera transform, 12 numbers row-major 3x4",
}

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
assert set(_DOCS) == set(_FIELDS)


def _parse_bool(key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigFileError(f"{key}: expected a boolean, got {raw!r}")


def _coerce(key: str, raw: str):
    default = getattr(RunConfig(), key)
    try:
        if isinstance(default, bool):
            return _parse_bool(key, raw)
        if isinstance(default, tuple):
            parts = raw.replace(",", " ").split()
            elem = type(default[0])
            return tuple(elem(p) for p in parts)
        return type(default)(raw)
    except ConfigFileError:
        raise
    except ValueError:
        raise ConfigFileError(
            f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """key -> raw string; rejects malformed lines and unknown/duplicate keys."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigFileError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        raw = raw.strip()
        if key not in _FIELDS:
            raise ConfigFileError(
                f"{source}:{lineno}: unknown configuration key {key!r}")
        if key in values:
            raise ConfigFileError(f"{source}:{lineno}: duplicate key {key!r}")
        if not raw:
            raise ConfigFileError(f"{source}:{lineno}: empty value for {key!r}")
        values[key] = raw
    return values


def load_run_config(path=None, overrides=None) -> RunConfig:
    """Defaults, then the config file, then key=value overrides."""
    merged = {}
    if path is not None:
        with open(path) as f:
            merged.update(parse_config_text(f.read(), source=str(path)))
    for key, raw in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigFileError(f"override: unknown configuration key {key!r}")
        merged[key] = raw
    typed = {key: _coerce(key, raw) for key, raw in merged.items()}
    return RunConfig(**typed)


def parse_overrides(pairs) -> dict:
    """CLI --set arguments 'key=value' into an override mapping."""
    out = {}
    for pair in pairs or ():
        key, sep, raw = pair.partition("=")
        if not sep or not key.strip() or not raw.strip():
            raise ConfigFileError(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = raw.strip()
    return out


def default_config_text() -> str:
    """A complete config file: every key, its default, and its meaning."""
    lines = ["# run configuration; every key shown with its default"]
    cfg = RunConfig()
    for name in _FIELDS:
        value = getattr(cfg, name)
        if isinstance(value, tuple):
            rendered = ",".join(repr(v) for v in value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        else:
            rendered = repr(value)
        lines.append(f"{name} = {rendered}  # {_DOCS[name]}")
    return "\n".join(lines) + "\n"
