"""Command-line surface: generate data, train, calibrate, evaluate, overlay.

Exit codes: 0 success, 1 runtime failure, 2 usage error (argparse).
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigFileError, load_run_config, parse_overrides
from .datagen import (
    GenerationError, ParseError, decalib_seed, decalibrate, generate_scene,
    load_dataset, load_scene, save_scene,
)
from .ppm import ImageFormatError, intensity_color, write_ppm
from .pseudoimage import CalibSample, rgb_to_unit
from .se3 import (
    GeometryError, compose, euler_from_se3, format_extrinsic, inverse,
    load_extrinsic, project_points, save_extrinsic,
)
from .training import TrainingError, calibrate, evaluate_posenet, load_posenet, train

_EVAL_EPOCH = 10 ** 9  # keeps evaluation draws disjoint from training epochs


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                   help="override one configuration key (repeatable)")


def _config_from(args) -> "RunConfig":
    return load_run_config(args.config, parse_overrides(args.set))


def scene_seed(base_seed: int, index: int) -> int:
    ss = np.random.SeedSequence([int(base_seed), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def cmd_gen_synthetic(args) -> int:
    cfg = _config_from(args)
    if args.scenes < 1:
        raise GenerationError("scene count must be >= 1")
    os.makedirs(args.out, exist_ok=True)
    manifest = ["scene,seed"]
    for i in range(args.scenes):
        seed = scene_seed(args.seed, i)
        sample = generate_scene(cfg.scene_spec(seed))
        name = f"scene_{i:05d}"
        save_scene(os.path.join(args.out, name), sample)
        manifest.append(f"{name},{seed}")
    with open(os.path.join(args.out, "manifest.csv"), "w") as f:
        f.write("\n".join(manifest) + "\n")
    print(f"wrote {args.scenes} scenes to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    dataset = load_dataset(args.data)
    total = cfg.total_iterations
    every = max(1, total // 20)

    def progress(step, bd):
        if step % every == 0 or step == total - 1:
            print(f"step {step}/{total}  appearance {bd.appearance:.4f}  "
                  f"geometric {bd.geometric:.4f}  total {bd.total:.4f}")

    result = train(dataset, cfg.train_config(), cfg.network_config(),
                   out_dir=args.out, progress=progress)
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _config_from(args)
    sample = load_scene(args.sample_dir)
    try:
        t_init = load_extrinsic(args.t_init)
    except GeometryError as e:
        raise ParseError(f"{args.t_init}: {e}") from None
    sample = CalibSample(rgb=sample.rgb, cloud=sample.cloud,
                         intrinsics=sample.intrinsics, t_gt=sample.t_gt,
                         t_init=t_init)
    t_pred = calibrate(args.checkpoint, sample, cfg.network_config())
    print(format_extrinsic(t_pred), end="")
    delta = euler_from_se3(compose(t_pred, inverse(t_init)))
    print(f"delta vs T_init: x {delta.tx * 100:+.3f} cm  y {delta.ty * 100:+.3f} cm  "
          f"z {delta.tz * 100:+.3f} cm")
    print(f"                 roll {math.degrees(delta.roll):+.4f} deg  "
          f"pitch {math.degrees(delta.pitch):+.4f} deg  "
          f"yaw {math.degrees(delta.yaw):+.4f} deg")
    save_extrinsic(args.out, t_pred)
    print(f"wrote {args.out}")
    return 0


def _draw_overlay(sample: CalibSample, extrinsic: np.ndarray,
                  splat: int) -> np.ndarray:
    rgb = rgb_to_unit(sample.rgb)
    img = np.rint(rgb * 255).astype(np.uint8).copy()
    proj = project_points(sample.cloud, extrinsic, sample.intrinsics)
    idx = np.flatnonzero(proj.valid)
    px = np.floor(proj.uv[idx, 0]).astype(int)
    py = np.floor(proj.uv[idx, 1]).astype(int)
    colors = intensity_color(sample.cloud.intensity[idx])
    h, w = img.shape[:2]
    half = splat // 2
    for dy in range(-half, splat - half):
        for dx in range(-half, splat - half):
            yy = np.clip(py + dy, 0, h - 1)
            xx = np.clip(px + dx, 0, w - 1)
            img[yy, xx] = colors
    return img


def cmd_overlay(args) -> int:
    sample = load_scene(args.sample_dir)
    extrinsic = load_extrinsic(args.extrinsic)
    if args.splat < 1:
        raise GenerationError("--splat must be >= 1")
    write_ppm(args.out, _draw_overlay(sample, extrinsic, args.splat))
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config_from(args)
    dataset = load_dataset(args.data)
    samples = [decalibrate(s, cfg.train_config().decalib_range,
                           decalib_seed(cfg.seed, _EVAL_EPOCH, i),
                           cfg.intensity_threshold)
               for i, s in enumerate(dataset)]
    posenet = load_posenet(args.checkpoint, cfg.network_config())
    report = evaluate_posenet(posenet, samples, log_path=args.out)
    print(f"samples: {report.sample_count}")
    print("translation absolute error (cm):")
    print(f"  mean {report.trans_mean_cm:.4f}  X {report.x_cm:.4f}  "
          f"Y {report.y_cm:.4f}  Z {report.z_cm:.4f}")
    print("rotation absolute error (deg):")
    print(f"  mean {report.rot_mean_deg:.4f}  roll {report.roll_deg:.4f}  "
          f"pitch {report.pitch_deg:.4f}  yaw {report.yaw_deg:.4f}")
    if args.out:
        print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="concalib",
        description="LiDAR-camera extrinsic calibration via consistency learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic scene dataset")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--scenes", type=int, required=True, help="number of scenes")
    p.add_argument("--seed", type=int, default=0, help="master scene seed")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train the three networks")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="single-shot extrinsic correction")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--sample-dir", required=True, help="scene directory")
    p.add_argument("--t-init", required=True,
                   help="initial extrinsic file (12 numbers)")
    p.add_argument("--out", default="extrinsic_pred.txt",
                   help="where to write the corrected extrinsic")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("overlay", help="project points onto the image")
    p.add_argument("--sample-dir", required=True, help="scene directory")
    p.add_argument("--extrinsic", required=True, help="extrinsic file to apply")
    p.add_argument("--out", required=True, help="output PPM path")
    p.add_argument("--splat", type=int, default=1,
                   help="square point size in pixels")
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("eval", help="calibration error over a dataset")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", default=None, help="per-sample error CSV")
    p.set_defaults(func=cmd_eval)
    return parser


_RUNTIME_ERRORS = (ConfigFileError, GenerationError, ParseError, TrainingError,
                   CheckpointError, GeometryError, ImageFormatError,
                   ValueError, OSError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _RUNTIME_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
