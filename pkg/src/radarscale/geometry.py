"""Point projection, multi-sweep LiDAR accumulation and log-space densification."""
from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay, QhullError

from . import kernels
from .core import (
    EPS_DEPTH,
    CameraIntrinsics,
    DegenerateSupport,
    EmptyInput,
    FloatMap,
    MapKind,
    PointCloud,
    Pose,
    require_kind,
)


def pixel_indices(cloud: PointCloud, K: CameraIntrinsics):
    """Nearest-integer pixel coordinates of points in front of the camera.

    Returns ``(u, v, keep)`` where ``keep`` selects points with z > EPS_DEPTH;
    ``u``/``v`` are only meaningful where ``keep`` holds.
    """
    pts = cloud.points
    keep = pts[:, 2] > EPS_DEPTH
    u = np.full(len(pts), -1, dtype=np.int64)
    v = np.full(len(pts), -1, dtype=np.int64)
    if keep.any():
        uf, vf = K.project(pts[keep])
        # floor(x + 0.5): half-up, unlike numpy's banker's rint
        u[keep] = np.floor(uf + 0.5).astype(np.int64)
        v[keep] = np.floor(vf + 0.5).astype(np.int64)
    return u, v, keep


def project_points(cloud: PointCloud, K: CameraIntrinsics) -> FloatMap:
    """Sparse depth map; the nearest point wins when several share a pixel."""
    u, v, keep = pixel_indices(cloud, K)
    depth, valid = kernels.zbuffer(u[keep], v[keep], cloud.z[keep], K.height, K.width)
    return FloatMap(depth, valid, MapKind.DEPTH)


def transform_cloud(cloud: PointCloud, T: Pose) -> PointCloud:
    pts = cloud.points @ T.rotation.T + T.translation
    return PointCloud(pts, dict(cloud.attributes))


def accumulate_lidar(frames, K: CameraIntrinsics) -> FloatMap:
    """Project several sweeps, each given with its pose into the reference frame.

    ``frames`` holds ``(cloud, pose)`` or ``(cloud, pose, keep)`` tuples;
    ``keep`` is an optional per-point boolean array dropping e.g. points on
    dynamic objects before projection.
    """
    frames = list(frames)
    if not frames:
        raise EmptyInput("accumulate_lidar needs at least one frame")
    clouds = []
    for frame in frames:
        cloud, pose = frame[0], frame[1]
        if len(frame) > 2 and frame[2] is not None:
            cloud = cloud.subset(np.asarray(frame[2], dtype=bool))
        clouds.append(transform_cloud(cloud, pose))
    return project_points(PointCloud.concat(clouds), K)


def _check_support(xy: np.ndarray) -> None:
    if len(xy) < 3:
        raise DegenerateSupport(f"need at least 3 valid pixels, got {len(xy)}")
    centered = xy - xy[0]
    if np.linalg.matrix_rank(centered) < 2:
        raise DegenerateSupport("valid pixels are collinear")


def interpolate_log(sparse: FloatMap) -> FloatMap:
    """Densify a sparse depth map by piecewise-linear interpolation of log depth.

    Support is the Delaunay triangulation of the valid pixel centers; pixels
    outside their convex hull stay invalid. Input pixels are reproduced exactly.
    """
    require_kind(sparse, MapKind.DEPTH)
    vs, us = np.nonzero(sparse.valid)
    xy = np.column_stack([us, vs]).astype(np.float64)
    _check_support(xy)
    try:
        tri = Delaunay(xy)
    except QhullError as exc:
        raise DegenerateSupport(str(exc)) from exc
    depth = sparse.values[vs, us]
    out, valid = kernels.raster_log(
        tri.simplices, xy[:, 0], xy[:, 1], np.log(depth), sparse.height, sparse.width
    )
    out[vs, us] = depth
    valid[vs, us] = True
    return FloatMap(out, valid, MapKind.DEPTH)
