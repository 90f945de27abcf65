"""Synthetic scene generation and KITTI-format ingestion.

Scenes are axis-aligned boxes in the camera frame (x right, y down, z
forward): an optional ground slab, boxes resting on it, and thin vertical
poles. Every surface carries a checkerboard intensity pattern whose albedo
also drives the rendered RGB image, so image texture and point intensity
are genuinely correlated. Points are sampled on camera-facing faces and
kept only when unoccluded, then stored in the LiDAR frame through the
inverse of the true extrinsic.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from .ppm import read_ppm, write_ppm
from .pseudoimage import CalibSample, make_labels
from .se3 import (
    CameraIntrinsics, DecalibRange, GeometryError, PointCloud, compose,
    inverse, load_extrinsic, load_intrinsics, sample_decalibration,
    save_extrinsic, save_intrinsics, validate_se3,
)


class GenerationError(ValueError):
    pass


class ParseError(ValueError):
    pass


_GROUND_Y = 1.2          # camera height above ground, meters (y points down)
_GROUND_THICKNESS = 0.05
_BACKGROUND = 8.0        # albedo of empty pixels, [0,255] scale
_OTHERS = ((1, 2), (0, 2), (0, 1))  # in-plane axes for each face normal


@dataclass(frozen=True)
class Primitive:
    """Axis-aligned box with a checker intensity pattern on every face."""

    lo: np.ndarray
    hi: np.ndarray
    high: float       # bright checker intensity, [0,255]
    low: float        # dark checker intensity
    period: float     # checker cell size, meters
    tint: np.ndarray  # per-channel albedo multiplier in (0,1]

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(lo >= hi):
            raise GenerationError(f"degenerate box: lo={lo}, hi={hi}")
        if self.period <= 0:
            raise GenerationError("checker period must be positive")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "tint", np.asarray(self.tint, dtype=np.float64))

    def contains_origin(self) -> bool:
        return bool(np.all((self.lo <= 0.0) & (0.0 <= self.hi)))

    def checker(self, pts: np.ndarray, face_axis: np.ndarray) -> np.ndarray:
        """Pattern intensity at surface points with the given face normals."""
        vals = np.empty(len(pts))
        for a in range(3):
            sel = face_axis == a
            if not np.any(sel):
                continue
            o1, o2 = _OTHERS[a]
            cells = (np.floor(pts[sel, o1] / self.period)
                     + np.floor(pts[sel, o2] / self.period))
            vals[sel] = np.where(cells % 2 == 0, self.high, self.low)
        return vals


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Recipe for one random scene; every draw comes from the seed."""

    seed: int
    intrinsics: CameraIntrinsics
    extrinsic: np.ndarray                      # true lidar -> camera transform
    points_per_scene: int = 512
    ground: bool = True
    box_count: int = 3
    pole_count: int = 2
    depth_range: Tuple[float, float] = (2.0, 9.0)
    box_size_range: Tuple[float, float] = (0.6, 2.2)
    pole_height_range: Tuple[float, float] = (1.5, 3.5)
    pole_width_range: Tuple[float, float] = (0.08, 0.25)
    intensity_high_range: Tuple[float, float] = (40.0, 220.0)
    intensity_low_range: Tuple[float, float] = (3.0, 22.0)
    checker_period_range: Tuple[float, float] = (0.4, 1.2)
    intensity_noise: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "extrinsic",
                           validate_se3(self.extrinsic, "scene extrinsic"))
        if self.box_count < 0 or self.pole_count < 0:
            raise GenerationError("primitive counts must be >= 0")
        if not (self.ground or self.box_count or self.pole_count):
            raise GenerationError("scene needs at least one primitive")
        if self.points_per_scene < 100:
            raise GenerationError("points_per_scene must be >= 100")
        if self.intensity_noise < 0:
            raise GenerationError("intensity_noise must be >= 0")
        for name in ("depth_range", "box_size_range", "pole_height_range",
                     "pole_width_range", "intensity_high_range",
                     "intensity_low_range", "checker_period_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise GenerationError(f"{name} must satisfy 0 < lo <= hi")


def ray_hits(prims: Sequence[Primitive], dirs: np.ndarray):
    """Nearest box intersection per ray from the origin.

    Returns (t, prim_index, face_axis); t = inf and index = -1 for misses.
    The entry face is the slab whose near plane is crossed last.
    """
    m = len(dirs)
    best_t = np.full(m, np.inf)
    best_idx = np.full(m, -1, dtype=np.intp)
    best_axis = np.zeros(m, dtype=np.intp)
    for pi, prim in enumerate(prims):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = prim.lo[None, :] / dirs
            t2 = prim.hi[None, :] / dirs
        tmin = np.minimum(t1, t2)
        tmax = np.maximum(t1, t2)
        zero = dirs == 0.0
        inside = (prim.lo <= 0.0) & (0.0 <= prim.hi)
        tmin = np.where(zero, np.where(inside, -np.inf, np.inf), tmin)
        tmax = np.where(zero, np.where(inside, np.inf, -np.inf), tmax)
        t_near = tmin.max(axis=1)
        t_far = tmax.min(axis=1)
        hit = (t_near <= t_far) & (t_near > 1e-9) & (t_near < best_t)
        best_t[hit] = t_near[hit]
        best_idx[hit] = pi
        best_axis[hit] = tmin.argmax(axis=1)[hit]
    return best_t, best_idx, best_axis


@dataclass(frozen=True)
class RenderResult:
    rgb: np.ndarray        # (H,W,3) uint8
    hit_index: np.ndarray  # (H,W) intp, -1 where no surface
    depth: np.ndarray      # (H,W) float64, inf where no surface


def render_scene(prims: Sequence[Primitive], k: CameraIntrinsics) -> RenderResult:
    """Ray-cast the checker albedo through K at pixel centers."""
    xs = (np.arange(k.width) + 0.5 - k.cx) / k.fx
    ys = (np.arange(k.height) + 0.5 - k.cy) / k.fy
    gx, gy = np.meshgrid(xs, ys)
    dirs = np.column_stack([gx.ravel(), gy.ravel(), np.ones(gx.size)])
    t, idx, axis = ray_hits(prims, dirs)
    rgb = np.full((gx.size, 3), _BACKGROUND)
    for pi, prim in enumerate(prims):
        sel = idx == pi
        if not np.any(sel):
            continue
        pts = dirs[sel] * t[sel, None]
        rgb[sel] = prim.checker(pts, axis[sel])[:, None] * prim.tint
    img = np.rint(np.clip(rgb, 0, 255)).astype(np.uint8)
    shape = (k.height, k.width)
    return RenderResult(img.reshape(k.height, k.width, 3),
                        idx.reshape(shape), t.reshape(shape))


def _visible_faces(prims: Sequence[Primitive]):
    """Camera-facing faces as (prim_index, axis, plane) with areas."""
    faces, areas = [], []
    for pi, prim in enumerate(prims):
        for axis in range(3):
            o1, o2 = _OTHERS[axis]
            area = (prim.hi[o1] - prim.lo[o1]) * (prim.hi[o2] - prim.lo[o2])
            if prim.lo[axis] > 0:
                faces.append((pi, axis, prim.lo[axis]))
                areas.append(area)
            elif prim.hi[axis] < 0:
                faces.append((pi, axis, prim.hi[axis]))
                areas.append(area)
    return faces, np.asarray(areas, dtype=np.float64)


def sample_surface_points(prims: Sequence[Primitive], n: int,
                          rng: np.random.Generator):
    """n unoccluded points on camera-facing faces, area-weighted.

    Returns (points (n,3) camera frame, prim_index (n,), face_axis (n,)).
    """
    faces, areas = _visible_faces(prims)
    if not faces:
        raise GenerationError("no camera-facing surface to sample")
    weights = areas / areas.sum()
    got_pts: List[np.ndarray] = []
    got_prim: List[np.ndarray] = []
    got_axis: List[np.ndarray] = []
    have = 0
    for _ in range(200):
        if have >= n:
            break
        n_try = max(256, 2 * (n - have))
        face_ids = rng.choice(len(faces), size=n_try, p=weights)
        u = rng.uniform(size=(n_try, 2))
        cand = np.empty((n_try, 3))
        cand_prim = np.empty(n_try, dtype=np.intp)
        cand_axis = np.empty(n_try, dtype=np.intp)
        for fi in np.unique(face_ids):
            sel = face_ids == fi
            pi, axis, plane = faces[fi]
            prim = prims[pi]
            o1, o2 = _OTHERS[axis]
            cand[sel, axis] = plane
            cand[sel, o1] = prim.lo[o1] + u[sel, 0] * (prim.hi[o1] - prim.lo[o1])
            cand[sel, o2] = prim.lo[o2] + u[sel, 1] * (prim.hi[o2] - prim.lo[o2])
            cand_prim[sel] = pi
            cand_axis[sel] = axis
        dist = np.linalg.norm(cand, axis=1)
        t, _, _ = ray_hits(prims, cand / dist[:, None])
        keep = t >= dist - 1e-6
        got_pts.append(cand[keep])
        got_prim.append(cand_prim[keep])
        got_axis.append(cand_axis[keep])
        have += int(keep.sum())
    if have < n:
        raise GenerationError(
            f"sampled only {have}/{n} visible surface points; scene too occluded")
    pts = np.concatenate(got_pts)[:n]
    return pts, np.concatenate(got_prim)[:n], np.concatenate(got_axis)[:n]


def build_primitives(spec: SyntheticSceneSpec,
                     rng: np.random.Generator) -> List[Primitive]:
    k = spec.intrinsics
    half_fov = k.cx / k.fx

    def pattern():
        return dict(high=rng.uniform(*spec.intensity_high_range),
                    low=rng.uniform(*spec.intensity_low_range),
                    period=rng.uniform(*spec.checker_period_range),
                    tint=rng.uniform(0.7, 1.0, size=3))

    prims: List[Primitive] = []
    if spec.ground:
        z_far = spec.depth_range[1] + 3.0
        prims.append(Primitive(lo=(-8.0, _GROUND_Y, 0.5),
                               hi=(8.0, _GROUND_Y + _GROUND_THICKNESS, z_far),
                               **pattern()))
    for _ in range(spec.box_count):
        z = rng.uniform(*spec.depth_range)
        sx, h, sz = rng.uniform(*spec.box_size_range, size=3)
        xc = rng.uniform(-0.8, 0.8) * z * half_fov
        prims.append(Primitive(lo=(xc - sx / 2, _GROUND_Y - h, z - sz / 2),
                               hi=(xc + sx / 2, _GROUND_Y, z + sz / 2),
                               **pattern()))
    for _ in range(spec.pole_count):
        z = rng.uniform(*spec.depth_range)
        w = rng.uniform(*spec.pole_width_range)
        h = rng.uniform(*spec.pole_height_range)
        xc = rng.uniform(-0.8, 0.8) * z * half_fov
        prims.append(Primitive(lo=(xc - w / 2, _GROUND_Y - h, z - w / 2),
                               hi=(xc + w / 2, _GROUND_Y, z + w / 2),
                               **pattern()))
    return prims


def generate_from_primitives(prims: Sequence[Primitive], k: CameraIntrinsics,
                             extrinsic: np.ndarray, n_points: int,
                             rng: np.random.Generator,
                             intensity_noise: float = 5.0) -> CalibSample:
    """Assemble a sample from explicit geometry; extrinsic maps lidar->camera."""
    extrinsic = validate_se3(extrinsic, "extrinsic")
    for i, prim in enumerate(prims):
        if prim.contains_origin():
            raise GenerationError(f"camera origin lies inside primitive {i}")
    render = render_scene(prims, k)
    pts_cam, prim_idx, face_axis = sample_surface_points(prims, n_points, rng)
    intensity = np.empty(n_points)
    for pi, prim in enumerate(prims):
        sel = prim_idx == pi
        if np.any(sel):
            intensity[sel] = prim.checker(pts_cam[sel], face_axis[sel])
    if intensity_noise > 0:
        intensity += rng.uniform(-intensity_noise, intensity_noise, size=n_points)
    intensity = np.clip(intensity, 0.0, 255.0)
    t_cl = inverse(extrinsic)
    pts_lidar = pts_cam @ t_cl[:3, :3].T + t_cl[:3, 3]
    cloud = PointCloud(np.column_stack([pts_lidar, intensity]))
    return CalibSample(rgb=render.rgb, cloud=cloud, intrinsics=k,
                       t_gt=extrinsic.copy(), t_init=extrinsic.copy())


def generate_scene(spec: SyntheticSceneSpec) -> CalibSample:
    """Deterministic scene for the seed; T_init starts at T_gt (no decalibration)."""
    rng = np.random.default_rng(spec.seed)
    prims = build_primitives(spec, rng)
    return generate_from_primitives(prims, spec.intrinsics, spec.extrinsic,
                                    spec.points_per_scene, rng,
                                    spec.intensity_noise)


def decalib_seed(base_seed: int, epoch: int, index: int) -> int:
    """Per-epoch, per-sample perturbation seed (online resampling schedule)."""
    ss = np.random.SeedSequence([int(base_seed), int(epoch), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def decalibrate(sample: CalibSample, drange: DecalibRange, seed: int,
                threshold: float = 30.0) -> CalibSample:
    """Perturb the initial transform: T_init = delta @ T_gt; refresh labels.

    The cloud and image arrays are shared, not copied; only transforms and
    labels differ.
    """
    delta = sample_decalibration(drange, seed)
    out = CalibSample(rgb=sample.rgb, cloud=sample.cloud,
                      intrinsics=sample.intrinsics, t_gt=sample.t_gt,
                      t_init=compose(delta, sample.t_gt))
    return out.with_labels(make_labels(out, threshold))


# --- synthetic dataset directory layout --------------------------------------
# One subdirectory per scene:
#   image.ppm         P6 RGB render
#   cloud.bin         velodyne-style binary (LE f32 x,y,z,reflectance in [0,1])
#   intrinsics.txt    key-value camera model
#   extrinsic_gt.txt  12 numbers, row-major 3x4 lidar->camera

_SCENE_IMAGE = "image.ppm"
_SCENE_CLOUD = "cloud.bin"
_SCENE_INTRINSICS = "intrinsics.txt"
_SCENE_EXTRINSIC = "extrinsic_gt.txt"


def save_scene(scene_dir, sample: CalibSample) -> None:
    os.makedirs(scene_dir, exist_ok=True)
    rgb = sample.rgb
    if rgb.dtype != np.uint8:
        rgb = np.rint(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)
    write_ppm(os.path.join(scene_dir, _SCENE_IMAGE), rgb)
    save_kitti_cloud(os.path.join(scene_dir, _SCENE_CLOUD), sample.cloud)
    save_intrinsics(os.path.join(scene_dir, _SCENE_INTRINSICS), sample.intrinsics)
    save_extrinsic(os.path.join(scene_dir, _SCENE_EXTRINSIC), sample.t_gt)


def load_scene(scene_dir) -> CalibSample:
    for name in (_SCENE_IMAGE, _SCENE_CLOUD, _SCENE_INTRINSICS, _SCENE_EXTRINSIC):
        if not os.path.exists(os.path.join(scene_dir, name)):
            raise ParseError(f"scene directory {scene_dir} is missing {name}")
    rgb = read_ppm(os.path.join(scene_dir, _SCENE_IMAGE))
    cloud = load_kitti_cloud(os.path.join(scene_dir, _SCENE_CLOUD))
    k = load_intrinsics(os.path.join(scene_dir, _SCENE_INTRINSICS))
    t_gt = load_extrinsic(os.path.join(scene_dir, _SCENE_EXTRINSIC))
    return CalibSample(rgb=rgb, cloud=cloud, intrinsics=k,
                       t_gt=t_gt, t_init=t_gt.copy())


def scene_dirs(dataset_dir) -> List[str]:
    """Scene subdirectories in sorted (deterministic) order."""
    subdirs = sorted(d for d in os.listdir(dataset_dir)
                     if os.path.isdir(os.path.join(dataset_dir, d)))
    return [os.path.join(dataset_dir, d) for d in subdirs]


def load_dataset(dataset_dir) -> List[CalibSample]:
    dirs = scene_dirs(dataset_dir)
    if not dirs:
        raise ParseError(f"no scene subdirectories under {dataset_dir}")
    return [load_scene(d) for d in dirs]


# --- KITTI odometry format ----------------------------------------------------

def load_kitti_cloud(path) -> PointCloud:
    """Velodyne binary: consecutive LE f32 (x, y, z, reflectance in [0,1])."""
    size = os.path.getsize(path)
    if size % 16 != 0:
        offset = (size // 16) * 16
        raise ParseError(
            f"{path}: malformed point record at byte offset {offset}: "
            f"file size {size} is not a multiple of 16")
    if size == 0:
        raise ParseError(f"{path}: empty point cloud file")
    raw = np.fromfile(path, dtype="<f4")
    pts = raw.reshape(-1, 4).astype(np.float64)
    pts[:, 3] *= 255.0
    return PointCloud(pts)


def save_kitti_cloud(path, cloud: PointCloud) -> None:
    pts = cloud.points.copy()
    pts[:, 3] /= 255.0
    pts.astype("<f4").tofile(path)


def parse_kitti_calib(path):
    """KITTI calib.txt: lines of 'KEY: 12 numbers' as (3,4) arrays."""
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            key, sep, rest = line.partition(":")
            if not sep:
                raise ParseError(f"{path}:{lineno}: expected 'KEY: values'")
            fields = rest.split()
            if len(fields) != 12:
                raise ParseError(
                    f"{path}:{lineno}: key {key!r} has {len(fields)} values, "
                    f"expected 12")
            try:
                vals = np.array([float(v) for v in fields])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value") from None
            out[key.strip()] = vals.reshape(3, 4)
    return out


def _read_image(path) -> np.ndarray:
    if path.endswith(".ppm"):
        return read_ppm(path)
    try:
        from PIL import Image
    except ImportError:
        raise ParseError(
            f"{path}: only .ppm images are readable without pillow installed")
    return np.asarray(Image.open(path).convert("RGB"))


_IMAGE_EXTS = (".ppm", ".png")


def load_kitti_sequence(dir_path, camera_id: int = 2) -> Iterator[CalibSample]:
    """Stream (cloud, image, calib) frames from a KITTI odometry sequence dir."""
    calib_path = os.path.join(dir_path, "calib.txt")
    if not os.path.exists(calib_path):
        raise ParseError(f"{dir_path} has no calib.txt")
    calib = parse_kitti_calib(calib_path)
    p_key = f"P{camera_id}"
    for key in (p_key, "Tr"):
        if key not in calib:
            raise ParseError(f"{calib_path}: missing calibration key {key!r}")
    p = calib[p_key]
    t_lc = np.eye(4)
    t_lc[:3] = calib["Tr"]
    try:
        t_lc = validate_se3(t_lc, "Tr")
    except GeometryError as e:
        raise ParseError(f"{calib_path}: {e}") from None

    velo_dir = os.path.join(dir_path, "velodyne")
    image_dir = os.path.join(dir_path, f"image_{camera_id}")
    if not os.path.isdir(velo_dir):
        raise ParseError(f"{dir_path} has no velodyne/ directory")
    for fname in sorted(os.listdir(velo_dir)):
        if not fname.endswith(".bin"):
            continue
        stem = fname[:-4]
        image_path = None
        for ext in _IMAGE_EXTS:
            cand = os.path.join(image_dir, stem + ext)
            if os.path.exists(cand):
                image_path = cand
                break
        if image_path is None:
            raise ParseError(f"{image_dir} has no image for frame {stem}")
        rgb = _read_image(image_path)
        h, w = rgb.shape[:2]
        k = CameraIntrinsics(fx=float(p[0, 0]), fy=float(p[1, 1]),
                             cx=float(p[0, 2]), cy=float(p[1, 2]),
                             width=w, height=h)
        cloud = load_kitti_cloud(os.path.join(velo_dir, fname))
        yield CalibSample(rgb=rgb, cloud=cloud, intrinsics=k,
                          t_gt=t_lc, t_init=t_lc.copy())
