"""End-to-end acceptance suite.

Each test covers one numbered acceptance criterion and prints a single
PASS/FAIL line (run with -s to see them as they happen). The desk-scale
recovery training (criteria 5 and 6) runs on the numpy kernel backend,
which is the faster one at these shapes; see benchmarks/bench_kernels.py.
"""

import time

import numpy as np
import pytest

from concalib import autodiff as ad
from concalib import kernels
from concalib.autodiff import AttentionBlock, Tape, Tensor
from concalib.checkpoint import load_checkpoint, save_checkpoint
from concalib.datagen import (
    SyntheticSceneSpec, decalib_seed, decalibrate, generate_scene,
    load_kitti_cloud, save_kitti_cloud,
)
from concalib.losses import (
    _branch_ce, _branch_l1, batch_loss, project_differentiable,
)
from concalib.networks import (
    DepthNet, IntensityNet, NetworkConfig, PoseNet, PosePrediction,
    pose_to_tpred, reset_forward_counters,
)
from concalib.ppm import format_ppm
from concalib.pseudoimage import CalibSample, binarize_intensity, make_labels
from concalib.se3 import (
    CameraIntrinsics, EulerPose, PointCloud, compose, euler_from_se3,
    euler_to_se3, format_extrinsic, inverse, parse_extrinsic, project_points,
)
from concalib.training import (
    TrainConfig, calibrate, combined_state, evaluate_posenet, train,
    transform_errors,
)
from gradcheck import check_grads, gradcheck_params

# ---------------------------------------------------------------- protocol

K = CameraIntrinsics(fx=40.0, fy=40.0, cx=32.0, cy=16.0, width=64, height=32)
T_LC = euler_to_se3(EulerPose(0.02, -0.03, 0.01, 0.10, -0.05, 0.08))
NET_CFG = NetworkConfig(input_height=32, input_width=64,
                        encoder_widths=(16,), embed_dim=16, max_depth=12.0)

TRAIN_SCENES = 512
HELD_SCENES = 64
TRAIN_STEPS = 15000
ABLATION_STEPS = 6000
DESK_LR = 0.002
EVAL_EPOCH = 10 ** 9

TINY_K = CameraIntrinsics(fx=20.0, fy=20.0, cx=16.0, cy=8.0, width=32, height=16)
TINY_CFG = NetworkConfig(input_height=16, input_width=32)


def scene_spec(seed):
    return SyntheticSceneSpec(
        seed=seed, intrinsics=K, extrinsic=T_LC, points_per_scene=512,
        box_count=3, pole_count=3, depth_range=(1.5, 4.5),
        box_size_range=(0.6, 1.6), pole_width_range=(0.15, 0.4),
        checker_period_range=(1.5, 4.0))


def desk_train_config(steps, lr=DESK_LR, **overrides):
    base = dict(total_iterations=steps, batch_size=4, initial_lr=lr, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


def decalibrated_heldout(held, cfg):
    return [decalibrate(s, cfg.decalib_range,
                        decalib_seed(cfg.seed, EVAL_EPOCH, i),
                        cfg.intensity_threshold)
            for i, s in enumerate(held)]


def heldout_report(posenet, held, cfg):
    decal = decalibrated_heldout(held, cfg)
    return evaluate_posenet(posenet, decal), decal


def check(num, ok, detail):
    print(f"\ncriterion {num} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {num}: {detail}"


@pytest.fixture(scope="module")
def fast_kernels():
    start = kernels.backend_name
    kernels.use_backend("reference")
    yield
    kernels.use_backend(start)


@pytest.fixture(scope="module")
def desk_scenes():
    train_set = [generate_scene(scene_spec(1000 + i)) for i in range(TRAIN_SCENES)]
    held = [generate_scene(scene_spec(900000 + i)) for i in range(HELD_SCENES)]
    return train_set, held


@pytest.fixture(scope="module")
def desk_run(fast_kernels, desk_scenes):
    train_set, held = desk_scenes
    cfg = desk_train_config(TRAIN_STEPS)
    t0 = time.time()
    result = train(train_set, cfg, NET_CFG)
    elapsed = time.time() - t0
    report, _ = heldout_report(result.posenet, held, cfg)
    return result, report, elapsed, cfg


# ------------------------------------------------- criterion 1: geometry

def test_criterion_1_geometry_oracle_suite():
    rng = np.random.default_rng(11)
    cases = 1000
    worst = 0.0
    for _ in range(cases):
        pose = EulerPose(*rng.uniform(-1.2, 1.2, 3), *rng.uniform(-5, 5, 3))
        t = euler_to_se3(pose)
        back = euler_from_se3(t)
        worst = max(worst, np.abs(np.array(back) - np.array(pose)).max())

        worst = max(worst, np.abs(compose(t, inverse(t)) - np.eye(4)).max())
        worst = max(worst, np.abs(inverse(inverse(t)) - t).max())

        pts = np.column_stack([rng.uniform(-4, 4, 8), rng.uniform(-3, 3, 8),
                               rng.uniform(0.5, 9, 8), rng.uniform(0, 255, 8)])
        cloud = PointCloud(pts)
        proj = project_points(cloud, t, K)
        # independent oracle: explicit homogeneous multiply per point
        for i in range(len(cloud)):
            ph = t @ np.array([*pts[i, :3], 1.0])
            if ph[2] > 0.1:
                u = K.fx * ph[0] / ph[2] + K.cx
                v = K.fy * ph[1] / ph[2] + K.cy
                inside = 0 <= u < K.width and 0 <= v < K.height
                assert inside == bool(proj.valid[i])
                if inside:
                    worst = max(worst, abs(u - proj.uv[i, 0]),
                                abs(v - proj.uv[i, 1]))
            else:
                assert not proj.valid[i]
    check(1, worst <= 1e-9,
          f"geometry oracle suite worst |error| {worst:.3e} <= 1e-9 "
          f"over {cases} random cases")


# ------------------------------------------------- criterion 2: gradients

def _elementwise_op_cases(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    a = a + 0.2 * np.sign(a)  # keep relu/absolute probes away from the kink
    b = b + 0.2 * np.sign(b)
    return {
        "add": (lambda t: ad.tsum(ad.mul(ad.add(t["a"], t["b"]), t["w"])),
                {"a": a, "b": b, "w": rng.normal(size=(3, 4))}),
        "sub": (lambda t: ad.tsum(ad.mul(ad.sub(t["a"], t["b"]), t["w"])),
                {"a": a, "b": b, "w": rng.normal(size=(3, 4))}),
        "mul": (lambda t: ad.tsum(ad.mul(ad.mul(t["a"], t["b"]), t["w"])),
                {"a": a, "b": b, "w": rng.normal(size=(3, 4))}),
        "scalar_mul": (lambda t: ad.tsum(ad.mul(ad.scalar_mul(t["a"], 1.7), t["w"])),
                       {"a": a, "w": rng.normal(size=(3, 4))}),
        "relu": (lambda t: ad.tsum(ad.mul(ad.relu(t["a"]), t["w"])),
                 {"a": a, "w": rng.normal(size=(3, 4))}),
        "sigmoid": (lambda t: ad.tsum(ad.mul(ad.sigmoid(t["a"]), t["w"])),
                    {"a": a, "w": rng.normal(size=(3, 4))}),
        "absolute": (lambda t: ad.tsum(ad.mul(ad.absolute(t["a"]), t["w"])),
                     {"a": a, "w": rng.normal(size=(3, 4))}),
        "reshape": (lambda t: ad.tsum(ad.mul(ad.reshape(t["a"], (4, 3)),
                                             t["w"])),
                    {"a": a, "w": rng.normal(size=(4, 3))}),
        "transpose_last_two": (
            lambda t: ad.tsum(ad.mul(ad.transpose_last_two(t["a"]), t["w"])),
            {"a": a, "w": rng.normal(size=(4, 3))}),
        "concat": (lambda t: ad.tsum(ad.mul(ad.concat([t["a"], t["b"]], axis=0),
                                            t["w"])),
                   {"a": a, "b": b, "w": rng.normal(size=(6, 4))}),
        "tile_batch": (lambda t: ad.tsum(ad.mul(ad.tile_batch(t["a"], 2), t["w"])),
                       {"a": a, "w": rng.normal(size=(2, 3, 4))}),
        "take_batch": (
            lambda t: ad.tsum(ad.mul(ad.take_batch(ad.tile_batch(t["a"], 3), 1),
                                     t["w"])),
            {"a": a, "w": rng.normal(size=(3, 4))}),
        "tsum": (lambda t: ad.tsum(ad.mul(ad.tsum(t["a"], axis=0), t["w"])),
                 {"a": a, "w": rng.normal(size=(4,))}),
        "tmean": (lambda t: ad.tsum(ad.mul(ad.tmean(t["a"], axis=1), t["w"])),
                  {"a": a, "w": rng.normal(size=(3,))}),
    }


def _composite_op_cases(rng):
    img = rng.normal(size=(2, 4, 5))
    base = np.stack([rng.integers(0, 4, 6), rng.integers(0, 3, 6)], axis=1)
    coords = base + rng.uniform(0.2, 0.8, (6, 2))  # inside cells, off the lattice
    labels = rng.integers(0, 2, 5)
    return {
        "matmul": (lambda t: ad.tsum(ad.mul(ad.matmul(t["a"], t["b"]), t["w"])),
                   {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 2)),
                    "w": rng.normal(size=(3, 2))}),
        "linear": (lambda t: ad.tsum(ad.mul(ad.linear(t["x"], t["wt"], t["bias"]),
                                            t["w"])),
                   {"x": rng.normal(size=(3, 4)), "wt": rng.normal(size=(4, 2)),
                    "bias": rng.normal(size=(2,)), "w": rng.normal(size=(3, 2))}),
        "softmax_last_dim": (
            lambda t: ad.tsum(ad.mul(ad.softmax_last_dim(t["a"]), t["w"])),
            {"a": rng.normal(size=(3, 5)), "w": rng.normal(size=(3, 5))}),
        "conv2d": (
            lambda t: ad.tsum(ad.mul(ad.conv2d(t["x"], t["wt"], t["bias"], 2, 1),
                                     t["w"])),
            {"x": rng.normal(size=(1, 2, 5, 6)), "wt": rng.normal(size=(3, 2, 3, 3)),
             "bias": rng.normal(size=(3,)), "w": rng.normal(size=(1, 3, 3, 3))}),
        "nearest_upsample2x": (
            lambda t: ad.tsum(ad.mul(ad.nearest_upsample2x(t["x"]), t["w"])),
            {"x": rng.normal(size=(1, 2, 3, 4)), "w": rng.normal(size=(1, 2, 6, 8))}),
        "bilinear_sample": (
            lambda t: ad.tsum(ad.mul(ad.bilinear_sample(t["img"], t["c"]), t["w"])),
            {"img": img, "c": coords, "w": rng.normal(size=(6, 2))}),
        "softmax_cross_entropy": (
            lambda t: ad.softmax_cross_entropy(t["lg"], labels),
            {"lg": rng.normal(size=(5, 2))}),
    }


def test_criterion_2_gradient_suite():
    t0 = time.time()
    rng = np.random.default_rng(2)
    worst_elem = 0.0
    for name, (build, inputs) in _elementwise_op_cases(rng).items():
        worst_elem = max(worst_elem, check_grads(build, inputs, rtol=1e-4))
    worst_comp = 0.0
    for name, (build, inputs) in _composite_op_cases(rng).items():
        worst_comp = max(worst_comp, check_grads(build, inputs, rtol=1e-3))

    # attention block: inputs and parameters
    attn = AttentionBlock(8, 16, np.random.default_rng(3))
    for _, p in attn.params():
        p.data = p.data.astype(np.float64)
    q0 = rng.normal(size=(2, 3, 8))
    tok0 = rng.normal(size=(2, 5, 8))
    wq = rng.normal(size=(2, 3, 8))

    def attn_loss(t):
        return ad.tsum(ad.mul(attn(t["q"], t["tok"]), Tensor(wq, dtype=np.float64)))

    worst_comp = max(worst_comp,
                     check_grads(attn_loss, {"q": q0, "tok": tok0}, rtol=1e-3))

    def attn_param_loss():
        return ad.tsum(ad.mul(attn(Tensor(q0, dtype=np.float64),
                                   Tensor(tok0, dtype=np.float64)),
                              Tensor(wq, dtype=np.float64)))

    worst_comp = max(worst_comp,
                     gradcheck_params(attn_param_loss, attn.params(),
                                      n_per_tensor=4, rtol=1e-3))

    # pose_to_tpred entries
    t_init = euler_to_se3(EulerPose(0.02, -0.01, 0.03, 0.1, -0.2, 0.05))
    wt = rng.normal(size=(4, 4))

    def pose_loss(t):
        pred = PosePrediction(t["rot"], t["trans"])
        return ad.tsum(ad.mul(pose_to_tpred(pred, t_init),
                              Tensor(wt, dtype=np.float64)))

    worst_comp = max(worst_comp, check_grads(
        pose_loss, {"rot": rng.uniform(-0.02, 0.02, (1, 3)),
                    "trans": rng.uniform(-0.05, 0.05, (1, 3))}, rtol=1e-3))

    # projection and the full loss on a tiny scene
    z = rng.uniform(2.0, 8.0, 12)
    x = rng.uniform(-0.6, 0.6, 12) * z * (TINY_K.cx / TINY_K.fx)
    y = rng.uniform(-0.6, 0.6, 12) * z * (TINY_K.cy / TINY_K.fy)
    cloud = PointCloud(np.column_stack([x, y, z, rng.uniform(0, 255, 12)]))
    wp = rng.normal(size=(12, 2))

    def proj_loss(t):
        pred = PosePrediction(t["rot"], t["trans"])
        coords = project_differentiable(cloud, pose_to_tpred(pred, np.eye(4)),
                                        TINY_K)
        assert coords.valid.all()
        return ad.tsum(ad.mul(coords.uv, Tensor(wp, dtype=np.float64)))

    worst_comp = max(worst_comp, check_grads(
        proj_loss, {"rot": rng.uniform(-0.005, 0.005, (1, 3)),
                    "trans": rng.uniform(-0.02, 0.02, (1, 3))}, rtol=1e-3))

    samples = []
    for i in range(2):
        srng = np.random.default_rng(40 + i)
        zz = srng.uniform(2.0, 8.0, 30)
        xx = (srng.uniform(-0.8, 0.8, 30)) * zz * (TINY_K.cx / TINY_K.fx)
        yy = (srng.uniform(-0.8, 0.8, 30)) * zz * (TINY_K.cy / TINY_K.fy)
        cl = PointCloud(np.column_stack([xx, yy, zz, srng.uniform(0, 255, 30)]))
        t_gt = euler_to_se3(EulerPose(*srng.uniform(-0.01, 0.01, 3),
                                      *srng.uniform(-0.03, 0.03, 3)))
        s = CalibSample(rgb=srng.uniform(size=(TINY_K.height, TINY_K.width, 3)),
                        cloud=cl, intrinsics=TINY_K, t_gt=t_gt,
                        t_init=compose(euler_to_se3(
                            EulerPose(*srng.uniform(-0.005, 0.005, 3),
                                      *srng.uniform(-0.02, 0.02, 3))), t_gt))
        samples.append(s.with_labels(make_labels(s, 30.0)))
    pn = PoseNet(TINY_CFG, np.random.default_rng(7), dtype=np.float64)
    inet = IntensityNet(TINY_CFG, np.random.default_rng(8), dtype=np.float64)
    dnet = DepthNet(TINY_CFG, np.random.default_rng(9), dtype=np.float64)

    def total_loss_fn():
        return batch_loss(samples, pn, inet, dnet, 1.0, 1.0).loss

    params = pn.params() + inet.params() + dnet.params()
    # eps small enough that probes stay on one side of relu/bilinear kinks
    worst_comp = max(worst_comp, gradcheck_params(total_loss_fn, params,
                                                  n_per_tensor=2, rtol=1e-3,
                                                  eps=1e-5))
    elapsed = time.time() - t0
    check(2, worst_elem <= 1e-4 and worst_comp <= 1e-3 and elapsed < 120,
          f"gradient suite worst elementwise {worst_elem:.2e} <= 1e-4, "
          f"worst composite {worst_comp:.2e} <= 1e-3, {elapsed:.0f}s < 120s")


# ------------------------------------------------ criterion 3: safe start

def test_criterion_3_safe_start(tmp_path):
    # zero-initialized heads: calibrate returns T_init bit for bit
    rng = np.random.default_rng(5)
    nets = (PoseNet(TINY_CFG, rng), IntensityNet(TINY_CFG, rng),
            DepthNet(TINY_CFG, rng))
    ckpt = tmp_path / "zero.rcal"
    save_checkpoint(ckpt, combined_state(*nets))

    srng = np.random.default_rng(21)
    z = srng.uniform(2, 8, 40)
    x = srng.uniform(-0.8, 0.8, 40) * z * (TINY_K.cx / TINY_K.fx)
    y = srng.uniform(-0.8, 0.8, 40) * z * (TINY_K.cy / TINY_K.fy)
    cloud = PointCloud(np.column_stack([x, y, z, srng.uniform(0, 255, 40)]))
    t_gt = euler_to_se3(EulerPose(0.01, -0.02, 0.03, 0.2, -0.1, 0.15))
    sample = CalibSample(rgb=srng.uniform(size=(TINY_K.height, TINY_K.width, 3)),
                         cloud=cloud, intrinsics=TINY_K, t_gt=t_gt,
                         t_init=compose(euler_to_se3(
                             EulerPose(0.004, 0.002, -0.003, 0.05, -0.02, 0.03)),
                             t_gt))
    sample = sample.with_labels(make_labels(sample, 30.0))
    t_pred = calibrate(ckpt, sample, TINY_CFG)
    exact = np.array_equal(t_pred, sample.t_init)

    # branch symmetry at T_init = T_gt with float64 networks
    sym = CalibSample(rgb=sample.rgb, cloud=cloud, intrinsics=TINY_K,
                      t_gt=t_gt, t_init=t_gt.copy())
    sym = sym.with_labels(make_labels(sym, 30.0))
    inet = IntensityNet(TINY_CFG, np.random.default_rng(6), dtype=np.float64)
    dnet = DepthNet(TINY_CFG, np.random.default_rng(7), dtype=np.float64)
    with Tape():
        logits = ad.take_batch(inet(_pseudo_batch(sym)), 0)
        depth = ad.take_batch(dnet(_pseudo_batch(sym)), 0)
        zero = PosePrediction(Tensor(np.zeros((1, 3)), dtype=np.float64),
                              Tensor(np.zeros((1, 3)), dtype=np.float64))
        coords = project_differentiable(sym.cloud, pose_to_tpred(zero, sym.t_init),
                                        TINY_K)
        labels = sym.labels
        sel = np.flatnonzero(labels.valid_gt)
        gt_coords = Tensor(labels.gt_pixel[sel], dtype=np.float64)
        lab_pred = labels.binary_intensity[coords.indices]
        lab_gt = labels.binary_intensity[sel]
        ce_pred = float(_branch_ce(logits, coords.uv, lab_pred).data)
        ce_gt = float(_branch_ce(logits, gt_coords, lab_gt).data)
        l1_pred = float(_branch_l1(depth, coords.uv,
                                   labels.gt_depth[coords.indices]).data)
        l1_gt = float(_branch_l1(depth, gt_coords, labels.gt_depth[sel]).data)
    ce_gap = abs(ce_pred - ce_gt)
    l1_gap = abs(l1_pred - l1_gt)
    check(3, exact and ce_gap < 1e-6 and l1_gap < 1e-6,
          f"safe start: T_pred == T_init exactly ({exact}); branch symmetry "
          f"|dCE| {ce_gap:.2e} < 1e-6, |dL1| {l1_gap:.2e} < 1e-6")


def _pseudo_batch(sample):
    from concalib.pseudoimage import build_pseudo_image
    return build_pseudo_image(sample).channels[None]


# -------------------------------------------------- criterion 4: overfit

def test_criterion_4_overfit_regression(fast_kernels):
    scene = generate_scene(scene_spec(777))
    cfg = TrainConfig(total_iterations=2000, seed=0)  # paper defaults otherwise
    result = train([scene], cfg, NET_CFG)
    first = result.breakdowns[0].total
    last = result.breakdowns[-1].total
    ratio = last / first
    check(4, ratio < 0.10,
          f"overfit regression: step-0 total {first:.4f}, final {last:.4f}, "
          f"ratio {ratio:.4f} < 0.10 (one sample, 2000 steps, default config)")


# --------------------------------------- criterion 5: desk-scale recovery

def test_criterion_5_decalibration_recovery(desk_scenes, desk_run):
    _, held = desk_scenes
    result, report, elapsed, cfg = desk_run
    base = np.array([transform_errors(s.t_init, s.t_gt)
                     for s in decalibrated_heldout(held, cfg)])
    base_t, base_r = base[:, :3].mean(), base[:, 3:].mean()
    ok = (report.trans_mean_cm <= 2.0 and report.rot_mean_deg <= 0.20
          and TRAIN_STEPS <= 50000 and elapsed <= 7200)
    check(5, ok,
          f"desk-scale recovery: held-out mean {report.trans_mean_cm:.3f} cm / "
          f"{report.rot_mean_deg:.4f} deg (targets 2.0 cm / 0.20 deg; no-op "
          f"baseline {base_t:.2f} cm / {base_r:.3f} deg) after {TRAIN_STEPS} "
          f"steps in {elapsed:.0f}s on {kernels.backend_name} kernels")


# --------------------------------------- criterion 6: ablation direction

def test_criterion_6_ablation_direction(fast_kernels, desk_scenes, desk_run):
    train_set, held = desk_scenes
    _, full_report, _, _ = desk_run
    no_app_cfg = desk_train_config(ABLATION_STEPS, appearance_weight=0.0)
    no_geo_cfg = desk_train_config(ABLATION_STEPS, lambda_geo=0.0)
    no_app = train(train_set, no_app_cfg, NET_CFG)
    no_geo = train(train_set, no_geo_cfg, NET_CFG)
    rep_no_app, _ = heldout_report(no_app.posenet, held, no_app_cfg)
    rep_no_geo, _ = heldout_report(no_geo.posenet, held, no_geo_cfg)
    check(6, rep_no_app.trans_mean_cm > rep_no_geo.trans_mean_cm,
          f"ablation direction: w/o appearance {rep_no_app.trans_mean_cm:.3f} cm "
          f"> w/o geometric {rep_no_geo.trans_mean_cm:.3f} cm "
          f"(full model {full_report.trans_mean_cm:.3f} cm, "
          f"{ABLATION_STEPS} steps per ablation)")


# --------------------------------------- criterion 7: single-shot counters

def test_criterion_7_single_shot_contract(tmp_path):
    rng = np.random.default_rng(12)
    nets = (PoseNet(TINY_CFG, rng), IntensityNet(TINY_CFG, rng),
            DepthNet(TINY_CFG, rng))
    ckpt = tmp_path / "c.rcal"
    save_checkpoint(ckpt, combined_state(*nets))
    srng = np.random.default_rng(13)
    z = srng.uniform(2, 8, 30)
    x = srng.uniform(-0.5, 0.5, 30) * z
    y = srng.uniform(-0.3, 0.3, 30) * z
    cloud = PointCloud(np.column_stack([x, y, z, srng.uniform(0, 255, 30)]))
    sample = CalibSample(rgb=srng.uniform(size=(TINY_K.height, TINY_K.width, 3)),
                         cloud=cloud, intrinsics=TINY_K,
                         t_gt=np.eye(4), t_init=np.eye(4))
    sample = sample.with_labels(make_labels(sample, 30.0))
    reset_forward_counters()
    calibrate(ckpt, sample, TINY_CFG)
    counts = (PoseNet.forward_calls, IntensityNet.forward_calls,
              DepthNet.forward_calls)
    check(7, counts == (1, 0, 0),
          f"single-shot inference: forward counters (pose, intensity, depth) "
          f"= {counts}, expected (1, 0, 0)")


# ------------------------------------------ criterion 8: bit-exact formats

def test_criterion_8_format_bit_exactness(tmp_path):
    rng = np.random.default_rng(14)
    # KITTI binary round trip
    raw = np.column_stack([rng.normal(size=(50, 3)),
                           rng.integers(0, 256, 50) / 255.0]).astype("<f4")
    p1 = tmp_path / "a.bin"
    p1.write_bytes(raw.tobytes())
    cloud = load_kitti_cloud(p1)
    p2 = tmp_path / "b.bin"
    save_kitti_cloud(p2, cloud)
    kitti_ok = p1.read_bytes() == p2.read_bytes()

    # checkpoint round trip
    tensors = {"a.w": rng.normal(size=(3, 4)).astype(np.float32),
               "b.bias": rng.normal(size=7).astype(np.float32)}
    c1, c2 = tmp_path / "c1.rcal", tmp_path / "c2.rcal"
    save_checkpoint(c1, tensors)
    save_checkpoint(c2, load_checkpoint(c1))
    ckpt_ok = c1.read_bytes() == c2.read_bytes()

    # extrinsic text round trip
    t = euler_to_se3(EulerPose(0.1, -0.2, 0.3, 1.5, -2.5, 0.75))
    line = format_extrinsic(t)
    text_ok = format_extrinsic(parse_extrinsic(line)) == line

    # PPM determinism
    img = rng.integers(0, 256, (8, 10, 3)).astype(np.uint8)
    ppm_ok = format_ppm(img) == format_ppm(img.copy())

    check(8, kitti_ok and ckpt_ok and text_ok and ppm_ok,
          f"format bit-exactness: kitti {kitti_ok}, checkpoint {ckpt_ok}, "
          f"extrinsic text {text_ok}, ppm {ppm_ok}")


# ------------------------------------------ criterion 9: threshold semantics

def test_criterion_9_threshold_semantics():
    cloud = PointCloud(np.array([[0.0, 0.0, 5.0, 45.0],
                                 [0.0, 0.0, 5.0, 30.0],
                                 [0.0, 0.0, 5.0, 12.0]]))
    at30 = binarize_intensity(cloud, 30.0)
    at10 = binarize_intensity(cloud, 10.0)
    ok = (at30.tolist() == [1, 0, 0]) and (at10.tolist() == [1, 1, 1])
    check(9, ok,
          f"threshold semantics: intensities (45, 30, 12) -> {at30.tolist()} "
          f"at threshold 30 and {at10.tolist()} at threshold 10")
