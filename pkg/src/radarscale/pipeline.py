"""Per-frame pipeline: global alignment, quasi-dense scale, refinement."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .align import (
    AlignmentParams,
    AlignSpace,
    apply_alignment,
    build_correspondences,
    fit_ls,
    fit_ransac,
    fit_var,
)
from .core import CameraIntrinsics, FloatMap, MapKind, PointCloud
from .geometry import project_points
from .quasidense import (
    DEFAULT_TAU,
    ConfidenceStack,
    assemble_quasi_dense,
    compute_scale_map,
    oracle_stack,
)
from .refine import RefinerParams, compose, refiner_forward

GA_METHODS = ("const", "var", "ls", "ransac")


@dataclass(frozen=True)
class PipelineConfig:
    ga: str = "ls"
    space: AlignSpace = AlignSpace.INVERSE_DEPTH
    tau: float = DEFAULT_TAU
    patch_w: int = 0
    patch_h: int = 0
    seed: int = 0
    ransac_refit: bool = False

    def patch_size(self, K: CameraIntrinsics) -> tuple[int, int]:
        """Configured patch size; 0 means a tenth of the width / the full height."""
        w = self.patch_w or max(2, K.width // 10)
        h = self.patch_h or K.height
        return min(w, K.width), min(h, K.height)


@dataclass
class FrameResult:
    params: AlignmentParams
    d_ga: FloatMap
    z_ga: FloatMap
    d_q: FloatMap
    s_q: FloatMap
    inv_s_q: FloatMap
    r: FloatMap
    d_hat: FloatMap
    extras: dict = field(default_factory=dict)


def global_align(mono: FloatMap, radar: PointCloud, K: CameraIntrinsics, cfg: PipelineConfig,
                 frame_id: int = 0, const_params: AlignmentParams | None = None) -> AlignmentParams:
    if cfg.ga == "const":
        if const_params is None:
            raise ValueError("const alignment needs a precomputed dataset-wide scale")
        return AlignmentParams(const_params.scale, 0.0, cfg.space)
    corr = build_correspondences(mono, project_points(radar, K))
    if cfg.ga == "var":
        return fit_var(corr, cfg.space)
    if cfg.ga == "ls":
        return fit_ls(corr, cfg.space)
    if cfg.ga == "ransac":
        return fit_ransac(corr, cfg.seed, cfg.space, frame_id=frame_id, refit=cfg.ransac_refit)
    raise ValueError(f"unknown GA method {cfg.ga!r}; choose from {GA_METHODS}")


def run_frame(
    mono: FloatMap,
    radar: PointCloud,
    K: CameraIntrinsics,
    cfg: PipelineConfig,
    *,
    d_int: FloatMap | None = None,
    confidence: ConfidenceStack | None = None,
    refiner: RefinerParams | None = None,
    frame_id: int = 0,
    const_params: AlignmentParams | None = None,
) -> FrameResult:
    """Run every stage on one frame.

    Without ``confidence`` the oracle provider is built from ``d_int``.
    Without ``refiner`` the residual is zero and ``d_hat`` equals ``d_ga``.
    """
    params = global_align(mono, radar, K, cfg, frame_id, const_params)
    d_ga, z_ga = apply_alignment(mono, params)
    if confidence is None:
        if d_int is None:
            raise ValueError("oracle confidence needs the interpolated depth map")
        confidence = oracle_stack(radar, K, d_int, *cfg.patch_size(K))
    d_q = assemble_quasi_dense(confidence, cfg.tau)
    s_q, inv_s_q = compute_scale_map(d_q, d_ga)
    if refiner is None:
        r = FloatMap.dense(np.zeros(mono.shape), MapKind.RESIDUAL)
    else:
        r = refiner_forward(refiner, z_ga, inv_s_q)
    _, d_hat = compose(z_ga, r)
    return FrameResult(params, d_ga, z_ga, d_q, s_q, inv_s_q, r, d_hat)
