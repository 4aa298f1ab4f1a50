"""Metric dense depth from a scaleless monocular prediction and sparse radar."""
from .core import (
    CameraIntrinsics,
    FloatMap,
    MapKind,
    PointCloud,
    Pose,
    RadarScaleError,
)

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "FloatMap",
    "MapKind",
    "PointCloud",
    "Pose",
    "RadarScaleError",
]
