"""Shared map/cloud/camera types, error classes and elementary map algebra.

A :class:`FloatMap` is a dense ``(H, W)`` float64 grid paired with a boolean
validity mask. Invalid pixels hold ``0.0``; the mask, not the value, decides
whether a pixel takes part in any computation.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

EPS_DEPTH = 1e-6


class RadarScaleError(ValueError):
    """Base class for all domain errors raised by this package."""


class KindMismatch(RadarScaleError):
    pass


class ShapeMismatch(RadarScaleError):
    pass


class EmptyDomain(RadarScaleError):
    pass


class EmptyInput(RadarScaleError):
    pass


class DegenerateSupport(RadarScaleError):
    pass


class InvalidMap(RadarScaleError):
    pass


class MapKind(enum.Enum):
    DEPTH = "depth"
    INVERSE_DEPTH = "inverse_depth"
    SCALE = "scale"
    CONFIDENCE = "confidence"
    RESIDUAL = "residual"


_POSITIVE_KINDS = (MapKind.DEPTH, MapKind.INVERSE_DEPTH, MapKind.SCALE)


@dataclass(frozen=True, eq=False)
class FloatMap:
    """Immutable H x W map of reals with a validity mask.

    ``flags`` marks valid pixels whose value was produced by a fallback rule
    (filled with ones, clamped), so downstream code can tell them apart.
    """

    values: np.ndarray
    valid: np.ndarray
    kind: MapKind
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise ShapeMismatch(f"values {values.shape} vs valid {valid.shape}")
        flags = (
            np.zeros(values.shape, dtype=bool)
            if self.flags is None
            else np.array(self.flags, dtype=bool)
        )
        if flags.shape != values.shape:
            raise ShapeMismatch(f"flags {flags.shape} vs values {values.shape}")
        values[~valid] = 0.0
        flags &= valid
        v = values[valid]
        if not np.all(np.isfinite(v)):
            raise InvalidMap("non-finite value at a valid pixel")
        if self.kind in _POSITIVE_KINDS and np.any(v <= 0):
            raise InvalidMap(f"{self.kind.value} map has non-positive valid values")
        if self.kind is MapKind.CONFIDENCE and (np.any(v < 0) or np.any(v > 1)):
            raise InvalidMap("confidence outside [0, 1]")
        for arr in (values, valid, flags):
            arr.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "flags", flags)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @classmethod
    def dense(cls, values, kind: MapKind) -> "FloatMap":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones(values.shape, dtype=bool), kind)

    @classmethod
    def empty(cls, height: int, width: int, kind: MapKind) -> "FloatMap":
        return cls(np.zeros((height, width)), np.zeros((height, width), bool), kind)

    def valid_values(self) -> np.ndarray:
        return self.values[self.valid]

    def with_kind(self, kind: MapKind) -> "FloatMap":
        return FloatMap(self.values, self.valid, kind, self.flags)


def require_kind(m: FloatMap, *kinds: MapKind) -> None:
    if m.kind not in kinds:
        names = ", ".join(k.value for k in kinds)
        raise KindMismatch(f"expected {names} map, got {m.kind.value}")


def require_same_shape(*maps) -> None:
    shapes = {np.shape(m.values if isinstance(m, FloatMap) else m) for m in maps}
    if len(shapes) != 1:
        raise ShapeMismatch(f"shape mismatch: {sorted(shapes)}")


def masked_sum(m: FloatMap) -> float:
    if m.n_valid == 0:
        raise EmptyDomain("sum over a map with no valid pixels")
    return math.fsum(m.valid_values())


def masked_mean(m: FloatMap) -> float:
    return masked_sum(m) / m.n_valid


def invert_map(m: FloatMap) -> FloatMap:
    """Depth to inverse depth; depths at or below ``EPS_DEPTH`` become invalid."""
    require_kind(m, MapKind.DEPTH)
    valid = m.valid & (m.values > EPS_DEPTH)
    out = np.zeros(m.shape)
    out[valid] = 1.0 / m.values[valid]
    return FloatMap(out, valid, MapKind.INVERSE_DEPTH)


def invert_inverse_map(m: FloatMap) -> FloatMap:
    require_kind(m, MapKind.INVERSE_DEPTH)
    valid = m.valid & (m.values > 0)
    out = np.zeros(m.shape)
    out[valid] = 1.0 / m.values[valid]
    valid &= out > EPS_DEPTH
    return FloatMap(out, valid, MapKind.DEPTH)


def apply_mask(m: FloatMap, mask) -> FloatMap:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != m.shape:
        raise ShapeMismatch(f"mask {mask.shape} vs map {m.shape}")
    return FloatMap(m.values, m.valid & mask, m.kind, m.flags)


def resize_bilinear(m: FloatMap, w: int, h: int) -> FloatMap:
    """Corner-aligned bilinear resampling.

    An output pixel is valid only if every source pixel carrying a non-zero
    weight is valid.
    """
    if w < 2 or h < 2:
        raise ValueError("target size must be at least 2x2")
    H, W = m.shape
    if (h, w) == (H, W):
        return m
    xs = np.arange(w) * ((W - 1) / (w - 1))
    ys = np.arange(h) * ((H - 1) / (h - 1))
    x0 = np.minimum(np.floor(xs).astype(int), W - 1)
    y0 = np.minimum(np.floor(ys).astype(int), H - 1)
    fx = xs - x0
    fy = ys - y0
    x1 = np.where(fx > 0, np.minimum(x0 + 1, W - 1), x0)
    y1 = np.where(fy > 0, np.minimum(y0 + 1, H - 1), y0)

    v, ok = m.values, m.valid
    Y0, X0 = np.meshgrid(y0, x0, indexing="ij")
    Y1, X1 = np.meshgrid(y1, x1, indexing="ij")
    FY, FX = np.meshgrid(fy, fx, indexing="ij")
    out = (
        v[Y0, X0] * (1 - FX) * (1 - FY)
        + v[Y0, X1] * FX * (1 - FY)
        + v[Y1, X0] * (1 - FX) * FY
        + v[Y1, X1] * FX * FY
    )
    valid = ok[Y0, X0] & ok[Y0, X1] & ok[Y1, X0] & ok[Y1, X1]
    lo, hi = (m.valid_values().min(), m.valid_values().max()) if m.n_valid else (0, 0)
    # rounding can step one ulp outside the source range
    out = np.clip(out, lo, hi)
    return FloatMap(out, valid, m.kind)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points in camera coordinates (meters) with optional per-point channels."""

    points: np.ndarray
    attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        attrs = {}
        for name, vals in self.attributes.items():
            vals = np.array(vals, dtype=np.float64).reshape(-1)
            if len(vals) != len(pts):
                raise ShapeMismatch(f"attribute {name!r} has {len(vals)} entries for {len(pts)} points")
            vals.setflags(write=False)
            attrs[name] = vals
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "attributes", attrs)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def z(self) -> np.ndarray:
        return self.points[:, 2]

    def subset(self, idx) -> "PointCloud":
        return PointCloud(self.points[idx], {k: v[idx] for k, v in self.attributes.items()})

    @staticmethod
    def concat(clouds) -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            return PointCloud(np.zeros((0, 3)))
        names = set(clouds[0].attributes)
        for c in clouds[1:]:
            names &= set(c.attributes)
        return PointCloud(
            np.concatenate([c.points for c in clouds]),
            {n: np.concatenate([c.attributes[n] for c in clouds]) for n in sorted(names)},
        )


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Continuous pixel coordinates; caller filters z."""
        x, y, z = points[:, 0], points[:, 1], points[:, 2]
        return self.fx * x / z + self.cx, self.fy * y / z + self.cy

    def back_project(self, u, v, z) -> np.ndarray:
        u, v, z = (np.asarray(a, dtype=np.float64) for a in (u, v, z))
        return np.stack([(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z], axis=-1)


class Pose:
    """Rigid 4x4 transform mapping points of one frame into another."""

    __slots__ = ("matrix",)

    def __init__(self, matrix=None):
        m = np.eye(4) if matrix is None else np.array(matrix, dtype=np.float64).reshape(4, 4)
        R = m[:3, :3]
        if np.abs(R.T @ R - np.eye(3)).max() >= 1e-6 or np.linalg.det(R) <= 0:
            raise ValueError("rotation block is not a proper rotation")
        if not np.allclose(m[3], [0, 0, 0, 1]):
            raise ValueError("last row of a pose must be [0, 0, 0, 1]")
        m.setflags(write=False)
        self.matrix = m

    @classmethod
    def from_rt(cls, R, t) -> "Pose":
        m = np.eye(4)
        m[:3, :3] = R
        m[:3, 3] = t
        return cls(m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def inverse(self) -> "Pose":
        R = self.rotation
        return Pose.from_rt(R.T, -R.T @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.matrix @ other.matrix)

    def __repr__(self):
        return f"Pose({self.matrix.tolist()})"
