"""Quasi-dense depth from per-radar-point confidence patches, and its scale map."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Protocol

import numpy as np

from . import kernels
from .core import (
    EPS_DEPTH,
    CameraIntrinsics,
    FloatMap,
    MapKind,
    PointCloud,
    RadarScaleError,
    ShapeMismatch,
    require_kind,
    require_same_shape,
)

LABEL_GATE = 0.5  # meters
DEFAULT_TAU = 0.5
BCE_EPS = 1e-7


class OutOfView(RadarScaleError):
    pass


class PatchTooLarge(RadarScaleError):
    pass


class Window(NamedTuple):
    u0: int
    v0: int
    w: int
    h: int

    def slices(self):
        return slice(self.v0, self.v0 + self.h), slice(self.u0, self.u0 + self.w)


@dataclass(frozen=True, eq=False)
class ConfidencePatch:
    point_index: int
    window: Window
    conf: np.ndarray

    def __post_init__(self):
        win = Window(*(int(x) for x in self.window))
        conf = np.array(self.conf, dtype=np.float64)
        if conf.shape != (win.h, win.w):
            raise ShapeMismatch(f"confidence {conf.shape} does not fit window {win}")
        if not np.all(np.isfinite(conf)):
            raise ValueError("confidence must be finite")
        conf.setflags(write=False)
        object.__setattr__(self, "window", win)
        object.__setattr__(self, "conf", conf)


@dataclass(frozen=True, eq=False)
class ConfidenceStack:
    width: int
    height: int
    patches: list
    cloud: PointCloud = field(default_factory=lambda: PointCloud(np.zeros((0, 3))))

    def __post_init__(self):
        seen = set()
        for p in self.patches:
            if not 0 <= p.point_index < len(self.cloud):
                raise ValueError(f"patch refers to missing point {p.point_index}")
            if p.point_index in seen:
                raise ValueError(f"two patches for point {p.point_index}")
            seen.add(p.point_index)
            u0, v0, w, h = p.window
            if u0 < 0 or v0 < 0 or u0 + w > self.width or v0 + h > self.height:
                raise ValueError(f"window {p.window} leaves the {self.width}x{self.height} image")
        object.__setattr__(self, "patches", sorted(self.patches, key=lambda p: p.point_index))


class ConfidenceProvider(Protocol):
    def __call__(self, cloud: PointCloud, K: CameraIntrinsics) -> ConfidenceStack: ...


def make_patch_window(point, K: CameraIntrinsics, patch_w: int, patch_h: int) -> Window:
    """Window of fixed size centered on the point's pixel, shifted inside the image."""
    if patch_w > K.width or patch_h > K.height:
        raise PatchTooLarge(f"patch {patch_w}x{patch_h} exceeds image {K.width}x{K.height}")
    x, y, z = (float(c) for c in point)
    if z <= EPS_DEPTH:
        raise OutOfView("point behind the camera")
    u = math.floor(K.fx * x / z + K.cx + 0.5)
    v = math.floor(K.fy * y / z + K.cy + 0.5)
    if not (0 <= u < K.width and 0 <= v < K.height):
        raise OutOfView(f"point projects to ({u}, {v}) outside the image")
    u0 = min(max(u - patch_w // 2, 0), K.width - patch_w)
    v0 = min(max(v - patch_h // 2, 0), K.height - patch_h)
    return Window(u0, v0, patch_w, patch_h)


def oracle_confidence(point, window: Window, d_int: FloatMap, index: int = 0) -> ConfidencePatch:
    """Binary confidence: 1 where the interpolated depth is within 0.5 m of the point.

    Also serves as the classification label map for :func:`bce_loss`.
    """
    require_kind(d_int, MapKind.DEPTH)
    window = Window(*window)
    rows, cols = window.slices()
    if window.u0 < 0 or window.v0 < 0 or window.u0 + window.w > d_int.width or window.v0 + window.h > d_int.height:
        raise ShapeMismatch(f"window {window} outside map {d_int.shape}")
    vals = d_int.values[rows, cols]
    ok = d_int.valid[rows, cols]
    conf = (ok & (np.abs(vals - float(point[2])) < LABEL_GATE)).astype(np.float64)
    return ConfidencePatch(index, window, conf)


def oracle_stack(cloud: PointCloud, K: CameraIntrinsics, d_int: FloatMap, patch_w: int, patch_h: int) -> ConfidenceStack:
    """Oracle confidence for every point that projects into view."""
    patches = []
    for i, p in enumerate(cloud.points):
        try:
            win = make_patch_window(p, K, patch_w, patch_h)
        except OutOfView:
            continue
        patches.append(oracle_confidence(p, win, d_int, index=i))
    return ConfidenceStack(K.width, K.height, patches, cloud)


def assemble_quasi_dense(stack: ConfidenceStack, tau: float = DEFAULT_TAU) -> FloatMap:
    """Assign each pixel the depth of its most confident radar point, if above ``tau``."""
    if not stack.patches:
        return FloatMap.empty(stack.height, stack.width, MapKind.DEPTH)
    windows = np.array([p.window for p in stack.patches], dtype=np.int64)
    sizes = windows[:, 2] * windows[:, 3]
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    conf = np.concatenate([p.conf.ravel() for p in stack.patches])
    depths = stack.cloud.z[[p.point_index for p in stack.patches]]
    out, valid = kernels.assemble_argmax(windows, conf, offsets, depths, tau, stack.height, stack.width)
    return FloatMap(out, valid, MapKind.DEPTH)


def compute_scale_map(d_q: FloatMap, d_ga: FloatMap) -> tuple[FloatMap, FloatMap]:
    """Quasi-dense scale ``d_q / d_ga`` and its inverse with gaps filled by ones.

    Filled pixels are valid and carry ``flags=True``.
    """
    require_kind(d_q, MapKind.DEPTH)
    require_kind(d_ga, MapKind.DEPTH)
    require_same_shape(d_q, d_ga)
    both = d_q.valid & d_ga.valid
    s = np.zeros(d_q.shape)
    s[both] = d_q.values[both] / d_ga.values[both]
    inv = np.ones(d_q.shape)
    inv[both] = 1.0 / s[both]
    s_q = FloatMap(s, both, MapKind.SCALE)
    inv_filled = FloatMap(inv, np.ones(d_q.shape, bool), MapKind.SCALE, flags=~both)
    return s_q, inv_filled


def bce_loss(pred: ConfidencePatch, label: ConfidencePatch) -> float:
    if pred.window != label.window:
        raise ShapeMismatch(f"windows differ: {pred.window} vs {label.window}")
    y_hat = np.clip(pred.conf, BCE_EPS, 1.0 - BCE_EPS)
    y = label.conf
    terms = -(y * np.log(y_hat) + (1.0 - y) * np.log1p(-y_hat))
    return math.fsum(terms.ravel()) / terms.size
