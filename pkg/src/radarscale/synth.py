"""Deterministic synthetic scenes: ray-cast ground truth, simulated radar and
LiDAR returns, and an affinely distorted "monocular" inverse-depth prediction.

Camera frame: x right, y down, z forward. The ground is the plane
``y = ground_height``; boxes are axis-aligned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    EPS_DEPTH,
    CameraIntrinsics,
    FloatMap,
    MapKind,
    PointCloud,
    Pose,
    RadarScaleError,
)


class EmptyScene(RadarScaleError):
    pass


class InvalidDistortion(RadarScaleError):
    pass


@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center, float) - 0.5 * np.asarray(self.size, float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center, float) + 0.5 * np.asarray(self.size, float)


@dataclass(frozen=True)
class SceneSpec:
    width: int = 320
    height: int = 240
    fx: float | None = None
    fy: float | None = None
    cx: float | None = None
    cy: float | None = None
    ground_height: float | None = 1.5
    background: float | None = 80.0
    boxes: tuple = ()
    radar_points: int = 64
    radar_sigma: float = 0.0
    radar_jitter: float = 0.0
    radar_outliers: float = 0.0
    radar_max_range: float = 80.0
    radar_row_bias: float = 2.0
    lidar_stride: int = 4
    mono_a: float = 1.0
    mono_b: float = 0.0
    mono_gamma: float = 0.0
    seed: int = 0
    frame_id: int = 0

    def __post_init__(self):
        if self.radar_points < 0 or self.lidar_stride < 1:
            raise ValueError("counts must be >= 0 and the LiDAR stride >= 1")
        if self.radar_sigma < 0 or self.radar_jitter < 0:
            raise ValueError("noise levels must be >= 0")
        if not 0 <= self.radar_outliers < 1:
            raise ValueError("outlier fraction must lie in [0, 1)")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        f = 0.75 * self.width
        return CameraIntrinsics(
            self.fx if self.fx is not None else f,
            self.fy if self.fy is not None else f,
            self.cx if self.cx is not None else self.width / 2.0,
            self.cy if self.cy is not None else self.height / 2.0,
            self.width,
            self.height,
        )

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, self.frame_id, stream])))


_STREAM_RADAR, _STREAM_FIELD, _STREAM_LAYOUT, _STREAM_SWEEPS, _STREAM_DISTORT = range(1, 6)


def _rays(K: CameraIntrinsics):
    v, u = np.mgrid[0:K.height, 0:K.width].astype(np.float64)
    return (u - K.cx) / K.fx, (v - K.cy) / K.fy


def _hit_box(dx, dy, box: Box) -> np.ndarray:
    # slab test along rays (dx, dy, 1) from the origin; returns entry depth or inf
    lo, hi = box.lo, box.hi
    t_near = np.full(dx.shape, -np.inf)
    t_far = np.full(dx.shape, np.inf)
    for d, a, b in ((dx, lo[0], hi[0]), (dy, lo[1], hi[1])):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = np.where(d != 0, a / d, np.where(a <= 0, -np.inf, np.inf))
            t2 = np.where(d != 0, b / d, np.where(b >= 0, np.inf, -np.inf))
        t_near = np.maximum(t_near, np.minimum(t1, t2))
        t_far = np.minimum(t_far, np.maximum(t1, t2))
    t_near = np.maximum(t_near, lo[2])
    t_far = np.minimum(t_far, hi[2])
    hit = (t_near <= t_far) & (t_near > EPS_DEPTH)
    return np.where(hit, t_near, np.inf)


def render_gt(spec: SceneSpec) -> FloatMap:
    """Nearest-surface depth per pixel center."""
    if not spec.boxes and spec.ground_height is None and spec.background is None:
        raise EmptyScene("scene has no surfaces")
    K = spec.intrinsics
    dx, dy = _rays(K)
    depth = np.full(dx.shape, np.inf)
    if spec.background is not None:
        depth = np.minimum(depth, float(spec.background))
    if spec.ground_height is not None:
        with np.errstate(divide="ignore"):
            t = np.where(dy > 0, spec.ground_height / np.where(dy > 0, dy, 1.0), np.inf)
        depth = np.minimum(depth, np.where(t > EPS_DEPTH, t, np.inf))
    for box in spec.boxes:
        depth = np.minimum(depth, _hit_box(dx, dy, box))
    valid = np.isfinite(depth)
    return FloatMap(np.where(valid, depth, 0.0), valid, MapKind.DEPTH)


def random_boxes(spec: SceneSpec, count: int, z_range=(4.0, 60.0)) -> tuple:
    """Boxes standing on the ground at random lateral positions and depths."""
    rng = spec.rng(_STREAM_LAYOUT)
    ground = spec.ground_height if spec.ground_height is not None else 1.5
    boxes = []
    for _ in range(count):
        z = rng.uniform(*z_range)
        sx, sy, sz = rng.uniform(1.0, 6.0), rng.uniform(1.0, 4.0), rng.uniform(0.5, 4.0)
        x = rng.uniform(-0.4, 0.4) * z
        boxes.append(Box((x, ground - sy / 2, z + sz / 2), (sx, sy, sz)))
    return tuple(boxes)


def frame_spec(base: SceneSpec, frame_id: int, n_boxes: int = 0, a_range=None, b_range=None) -> SceneSpec:
    """Per-frame variant of ``base``: random boxes and optionally drawn (a, b)."""
    spec = replace(base, frame_id=frame_id)
    if n_boxes:
        spec = replace(spec, boxes=tuple(base.boxes) + random_boxes(spec, n_boxes))
    rng = spec.rng(_STREAM_DISTORT)
    if a_range is not None:
        spec = replace(spec, mono_a=float(rng.uniform(*a_range)))
    if b_range is not None:
        spec = replace(spec, mono_b=float(rng.uniform(*b_range)))
    return spec


def sample_radar(spec: SceneSpec, gt: FloatMap) -> PointCloud:
    """Sparse noisy radar returns drawn from valid ground-truth pixels.

    Rows are weighted by ``((v + 1) / H) ** radar_row_bias`` (0 = uniform).
    Attribute ``outlier`` marks points whose depth was replaced by a uniform
    draw in ``[1, radar_max_range]``.
    """
    K = spec.intrinsics
    rng = spec.rng(_STREAM_RADAR)
    cand = gt.valid & (gt.values <= spec.radar_max_range)
    vs, us = np.nonzero(cand)
    n = min(spec.radar_points, len(vs))
    if n == 0:
        return PointCloud(np.zeros((0, 3)), {"outlier": np.zeros(0)})
    w = ((vs + 1.0) / K.height) ** spec.radar_row_bias
    pick = rng.choice(len(vs), n, replace=False, p=w / w.sum())
    pick.sort()
    u, v = us[pick].astype(np.float64), vs[pick].astype(np.float64)
    z = gt.values[vs[pick], us[pick]].copy()
    noise = rng.standard_normal((3, n))
    if spec.radar_sigma > 0:
        z = np.maximum(z + spec.radar_sigma * noise[0], 0.1)
    if spec.radar_jitter > 0:
        u = u + spec.radar_jitter * noise[1]
        v = v + spec.radar_jitter * noise[2]
    outlier = rng.random(n) < spec.radar_outliers
    repl = rng.uniform(1.0, spec.radar_max_range, n)
    z = np.where(outlier, repl, z)
    return PointCloud(K.back_project(u, v, z), {"outlier": outlier.astype(np.float64)})


def smooth_field(spec: SceneSpec) -> np.ndarray:
    """Zero-mean, unit max-abs sum of four low-frequency sinusoids."""
    rng = spec.rng(_STREAM_FIELD)
    v, u = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    f = np.zeros(u.shape)
    for _ in range(4):
        fu, fv = rng.uniform(0.2, 1.2, 2) * rng.choice([-1.0, 1.0], 2)
        phase = rng.uniform(0, 2 * math.pi)
        f += rng.uniform(0.5, 1.0) * np.sin(2 * math.pi * (fu * u / spec.width + fv * v / spec.height) + phase)
    f -= f.mean()
    peak = np.abs(f).max()
    return f / peak if peak > 0 else f


def distort_mono(spec: SceneSpec, gt: FloatMap) -> FloatMap:
    """``(a / gt + b) * exp(gamma * F)``, an inverse-depth map with unknown scale."""
    if not spec.mono_a > 0:
        raise InvalidDistortion(f"mono_a must be positive, got {spec.mono_a}")
    z = np.zeros(gt.shape)
    z[gt.valid] = spec.mono_a * (1.0 / gt.values[gt.valid]) + spec.mono_b
    if spec.mono_gamma != 0:
        z *= np.exp(spec.mono_gamma * smooth_field(spec))
    z = np.where(gt.valid, np.maximum(z, 1e-12), 0.0)
    return FloatMap(z, gt.valid, MapKind.INVERSE_DEPTH)


def sample_lidar(spec: SceneSpec, gt: FloatMap, offset: tuple = (0, 0)) -> PointCloud:
    """Noiseless returns on a regular pixel grid with the configured stride."""
    s = spec.lidar_stride
    grid = np.zeros(gt.shape, bool)
    grid[offset[1] % s::s, offset[0] % s::s] = True
    vs, us = np.nonzero(grid & gt.valid)
    return PointCloud(spec.intrinsics.back_project(us, vs, gt.values[vs, us]))


def _small_rotation(rng, max_angle):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    ang = rng.uniform(-max_angle, max_angle)
    kx = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(ang) * kx + (1 - math.cos(ang)) * kx @ kx


def lidar_sweeps(spec: SceneSpec, gt: FloatMap, n_sweeps: int = 1) -> list:
    """Sweeps as ``(cloud in sensor frame, pose sensor -> reference)``.

    Sweep 0 is the reference sweep with identity pose; later sweeps sample
    shifted grids and are expressed in slightly displaced sensor frames.
    """
    rng = spec.rng(_STREAM_SWEEPS)
    s = spec.lidar_stride
    out = [(sample_lidar(spec, gt), Pose())]
    for j in range(1, n_sweeps):
        offset = (int(rng.integers(0, s)), int(rng.integers(0, s)))
        ref_pts = sample_lidar(spec, gt, offset)
        pose = Pose.from_rt(_small_rotation(rng, 0.05), rng.uniform(-0.5, 0.5, 3))
        inv = pose.inverse()
        sensor = PointCloud(ref_pts.points @ inv.rotation.T + inv.translation)
        out.append((sensor, pose))
    return out


@dataclass
class SyntheticFrame:
    spec: SceneSpec
    gt: FloatMap
    radar: PointCloud
    mono: FloatMap
    sweeps: list = field(default_factory=list)
