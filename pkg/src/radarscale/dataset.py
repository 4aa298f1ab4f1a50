"""Synthetic datasets on disk.

A dataset directory holds ``index.txt`` (one frame directory name per line)
and one ``frame_NNNN`` directory per frame with:

* ``gt.pfm``: dense rendered ground-truth depth
* ``dgt.pfm``: reference LiDAR sweep projected to the image
* ``dint.pfm``: log-interpolated accumulated LiDAR depth (masked first)
* ``mono.pfm``: scaleless inverse-depth prediction
* ``radar.csv``, ``lidar.csv`` + ``pose.txt``; extra sweeps ``lidar_N.csv`` + ``pose_N.txt``
* ``mask.pgm``: static-scene mask applied before interpolation
* ``intrinsics.txt``, ``distortion.txt`` (``a b gamma``)
* ``conf/`` with oracle confidence patches when requested
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .config import Config
from .core import CameraIntrinsics, FloatMap, MapKind, PointCloud, apply_mask
from .geometry import accumulate_lidar, interpolate_log, project_points
from .pipeline import PipelineConfig
from .quasidense import oracle_stack
from .synth import SceneSpec, distort_mono, frame_spec, lidar_sweeps, render_gt, sample_radar

INDEX_NAME = "index.txt"


def frame_name(i: int) -> str:
    return f"frame_{i:04d}"


def base_spec(cfg: Config) -> SceneSpec:
    return SceneSpec(
        width=cfg.width, height=cfg.height,
        fx=cfg.fx, fy=cfg.fy, cx=cfg.cx, cy=cfg.cy,
        ground_height=cfg.ground_height, background=cfg.background, boxes=cfg.boxes,
        radar_points=cfg.radar_points, radar_sigma=cfg.radar_sigma,
        radar_jitter=cfg.radar_jitter, radar_outliers=cfg.radar_outliers,
        radar_max_range=cfg.radar_max_range, radar_row_bias=cfg.radar_row_bias,
        lidar_stride=cfg.lidar_stride,
        mono_a=cfg.mono_a, mono_b=cfg.mono_b, mono_gamma=cfg.mono_gamma,
        seed=cfg.seed,
    )


def generate_frame(cfg: Config, i: int, out_dir) -> str:
    """Render frame ``i`` and write its directory; returns the directory name."""
    spec = frame_spec(base_spec(cfg), i, cfg.random_boxes, cfg.a_range(), cfg.b_range())
    K = spec.intrinsics
    gt = render_gt(spec)
    radar = sample_radar(spec, gt)
    mono = distort_mono(spec, gt)
    sweeps = lidar_sweeps(spec, gt, cfg.lidar_sweeps)
    mask = np.ones(gt.shape, bool)  # synthetic scenes are static
    d_gt = project_points(sweeps[0][0], K)
    d_int = interpolate_log(apply_mask(accumulate_lidar(sweeps, K), mask))

    name = frame_name(i)
    d = io.ensure_dir(Path(out_dir) / name)
    io.save_map(d / "gt.pfm", gt)
    io.save_map(d / "dgt.pfm", d_gt)
    io.save_map(d / "dint.pfm", d_int)
    io.save_map(d / "mono.pfm", mono)
    io.write_cloud(d / "radar.csv", radar)
    for j, (cloud, pose) in enumerate(sweeps):
        suffix = "" if j == 0 else f"_{j}"
        io.write_cloud(d / f"lidar{suffix}.csv", cloud)
        io.write_pose(d / f"pose{suffix}.txt", pose)
    io.write_pgm(d / "mask.pgm", mask)
    io.write_intrinsics(d / "intrinsics.txt", K)
    (d / "distortion.txt").write_text(f"{spec.mono_a!r} {spec.mono_b!r} {spec.mono_gamma!r}\n")
    if cfg.write_confidence:
        size = PipelineConfig(patch_w=cfg.patch_w, patch_h=cfg.patch_h).patch_size(K)
        io.write_confidence(d / "conf", oracle_stack(radar, K, d_int, *size))
    return name


def write_index(out_dir, names) -> None:
    (Path(out_dir) / INDEX_NAME).write_text("".join(n + "\n" for n in names))


def read_index(data_dir) -> list[str]:
    path = Path(data_dir) / INDEX_NAME
    names = [line.strip() for line in path.read_text().splitlines() if line.strip()]
    if not names:
        raise io.FormatError(f"{path}: no frames listed")
    return names


@dataclass
class FrameData:
    name: str
    path: Path
    K: CameraIntrinsics
    mono: FloatMap
    radar: PointCloud
    gt: FloatMap | None
    d_gt: FloatMap | None
    d_int: FloatMap | None

    @property
    def frame_id(self) -> int:
        digits = self.name.rsplit("_", 1)[-1]
        return int(digits) if digits.isdigit() else 0

    def reference(self, which: str) -> FloatMap:
        ref = {"gt": self.gt, "dgt": self.d_gt, "dint": self.d_int}[which]
        if ref is None:
            raise FileNotFoundError(f"{self.path}: missing {which}.pfm")
        return ref


def _optional_map(path: Path) -> FloatMap | None:
    return io.load_map(path, MapKind.DEPTH) if path.exists() else None


def load_frame(data_dir, name: str) -> FrameData:
    d = Path(data_dir) / name
    K = io.read_intrinsics(d / "intrinsics.txt")
    mono = io.load_map(d / "mono.pfm", MapKind.INVERSE_DEPTH)
    if mono.shape != (K.height, K.width):
        raise io.FormatError(f"{d / 'mono.pfm'}: shape {mono.shape} does not match intrinsics")
    return FrameData(
        name, d, K, mono, io.read_cloud(d / "radar.csv"),
        _optional_map(d / "gt.pfm"), _optional_map(d / "dgt.pfm"), _optional_map(d / "dint.pfm"),
    )
