"""Global alignment of a scaleless monocular prediction to metric radar depth.

Four strategies are available: ``var`` (per-frame scale only, root finding),
``const`` (one scale shared by all frames), ``ls`` (per-frame scale and offset
by linear least squares) and ``ransac`` (least squares on random minimal
samples with outlier rejection).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core import (
    EPS_DEPTH,
    EmptyInput,
    FloatMap,
    KindMismatch,
    MapKind,
    RadarScaleError,
    require_kind,
    require_same_shape,
)

RANSAC_SAMPLE_SIZE = 5
RANSAC_MIN_INLIER_RATIO = 0.9
RANSAC_MAX_DEPTH_ERR = 6.0  # meters
RANSAC_MAX_INV_DEPTH_ERR = 0.015  # 1/meters
RANSAC_MAX_ITERS = 400
TOL_ROOT = 1e-10
VAR_BRACKET = (1e-6, 1e6)


class EmptyOverlap(RadarScaleError):
    pass


class SingularSystem(RadarScaleError):
    pass


class InsufficientData(RadarScaleError):
    pass


class NoBracket(RadarScaleError):
    pass


class NonPositiveScale(RadarScaleError):
    pass


class AlignSpace(enum.Enum):
    DEPTH = "depth"
    INVERSE_DEPTH = "inverse_depth"

    @property
    def map_kind(self) -> MapKind:
        return MapKind.DEPTH if self is AlignSpace.DEPTH else MapKind.INVERSE_DEPTH


@dataclass(frozen=True)
class AlignmentParams:
    scale: float
    offset: float = 0.0
    space: AlignSpace = AlignSpace.INVERSE_DEPTH

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise NonPositiveScale(f"alignment scale must be finite and > 0, got {self.scale}")
        if not math.isfinite(self.offset):
            raise ValueError("alignment offset must be finite")


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Prediction values paired with radar depths at shared valid pixels."""

    pred: np.ndarray
    depth: np.ndarray
    pixels: np.ndarray | None = None

    def __post_init__(self):
        pred = np.asarray(self.pred, dtype=np.float64).reshape(-1)
        depth = np.asarray(self.depth, dtype=np.float64).reshape(-1)
        if pred.shape != depth.shape:
            raise ValueError("pred and depth must have equal length")
        if np.any(depth <= 0):
            raise ValueError("radar depths must be positive")
        object.__setattr__(self, "pred", pred)
        object.__setattr__(self, "depth", depth)

    def __len__(self):
        return len(self.pred)

    def subset(self, idx) -> "Correspondences":
        pix = None if self.pixels is None else self.pixels[idx]
        return Correspondences(self.pred[idx], self.depth[idx], pix)


def build_correspondences(pred: FloatMap, radar: FloatMap) -> Correspondences:
    require_kind(radar, MapKind.DEPTH)
    require_same_shape(pred, radar)
    both = pred.valid & radar.valid
    if not both.any():
        raise EmptyOverlap("prediction and radar maps share no valid pixel")
    vs, us = np.nonzero(both)
    return Correspondences(pred.values[vs, us], radar.values[vs, us], np.column_stack([us, vs]))


def _targets(c: Correspondences, space: AlignSpace) -> np.ndarray:
    return 1.0 / c.depth if space is AlignSpace.INVERSE_DEPTH else c.depth


def _ls_solve(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    # centered normal equations; exact for affine data up to rounding
    xm = math.fsum(x) / len(x)
    ym = math.fsum(y) / len(y)
    dx = x - xm
    sxx = math.fsum(dx * dx)
    if sxx == 0.0 or sxx <= 1e-28 * max(1.0, xm * xm) * len(x):
        raise SingularSystem("prediction values are (numerically) identical")
    scale = math.fsum(dx * (y - ym)) / sxx
    return scale, ym - scale * xm


def fit_ls(c: Correspondences, space: AlignSpace = AlignSpace.INVERSE_DEPTH) -> AlignmentParams:
    """Least-squares scale and offset of ``scale * pred + offset ~ target``.

    In inverse-depth space the target is ``1 / radar_depth``.
    """
    if len(c) < 2:
        raise InsufficientData(f"least squares needs >= 2 pairs, got {len(c)}")
    scale, offset = _ls_solve(c.pred, _targets(c, space))
    return AlignmentParams(scale, offset, space)


def var_objective(s: float, c: Correspondences, space: AlignSpace = AlignSpace.INVERSE_DEPTH) -> float:
    """Squared depth residual of the scale-only model."""
    aligned = s * c.pred
    d = 1.0 / aligned if space is AlignSpace.INVERSE_DEPTH else aligned
    return math.fsum((d - c.depth) ** 2)


def _var_gradient_sign_fn(c: Correspondences, space: AlignSpace):
    # positive multiples of dE/ds with the 1/s^k factor removed, same roots and signs
    z, d = c.pred, c.depth
    if space is AlignSpace.INVERSE_DEPTH:
        # dE/ds = (2 / s^2) * sum((d - 1/(s z)) / z)
        return lambda s: math.fsum((d - 1.0 / (s * z)) / z)
    # dE/ds = 2 * sum((s z - d) z)
    return lambda s: math.fsum((s * z - d) * z)


def fit_var(c: Correspondences, space: AlignSpace = AlignSpace.INVERSE_DEPTH) -> AlignmentParams:
    """Scale-only alignment by Brent root finding on the objective's derivative."""
    if len(c) < 1:
        raise InsufficientData("scale-only fit needs >= 1 pair")
    if np.any(c.pred <= 0):
        raise ValueError("scale-only fit needs positive predictions")
    g = _var_gradient_sign_fn(c, space)
    lo_lim, hi_lim = VAR_BRACKET
    if space is AlignSpace.INVERSE_DEPTH:
        guess = float(np.median(1.0 / (c.pred * c.depth)))
    else:
        guess = float(np.median(c.depth / c.pred))
    guess = min(max(guess, lo_lim), hi_lim)
    lo = hi = guess
    while g(lo) > 0 and lo > lo_lim:
        lo = max(lo / 10.0, lo_lim)
    while g(hi) < 0 and hi < hi_lim:
        hi = min(hi * 10.0, hi_lim)
    glo, ghi = g(lo), g(hi)
    if glo == 0:
        return AlignmentParams(lo, 0.0, space)
    if ghi == 0:
        return AlignmentParams(hi, 0.0, space)
    if not (glo < 0 < ghi):
        raise NoBracket(f"no sign change of dE/ds within [{lo_lim}, {hi_lim}]")
    s = brentq(g, lo, hi, xtol=1e-300, rtol=TOL_ROOT, maxiter=500)
    return AlignmentParams(float(s), 0.0, space)


def estimate_const(per_frame_scales) -> AlignmentParams:
    scales = [float(s) for s in per_frame_scales]
    if not scales:
        raise EmptyInput("no per-frame scales to average")
    return AlignmentParams(math.fsum(scales) / len(scales), 0.0)


def inlier_mask(c: Correspondences, p: AlignmentParams) -> np.ndarray:
    """Depth error under 6 m or inverse-depth error under 0.015, after alignment."""
    aligned = p.scale * c.pred + p.offset
    with np.errstate(divide="ignore"):
        if p.space is AlignSpace.INVERSE_DEPTH:
            z_al = aligned
            d_al = np.where(aligned > 0, 1.0 / np.where(aligned > 0, aligned, 1.0), np.inf)
        else:
            d_al = aligned
            z_al = np.where(aligned > 0, 1.0 / np.where(aligned > 0, aligned, 1.0), np.inf)
    positive = aligned > 0
    depth_ok = np.abs(d_al - c.depth) < RANSAC_MAX_DEPTH_ERR
    inv_ok = np.abs(z_al - 1.0 / c.depth) < RANSAC_MAX_INV_DEPTH_ERR
    return positive & (depth_ok | inv_ok)


def frame_rng(seed: int, frame_id: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, frame id)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, frame_id])))


@dataclass(frozen=True)
class RansacResult:
    params: AlignmentParams
    inlier_ratio: float
    iterations: int
    accepted: bool


def ransac_search(
    c: Correspondences,
    rng: np.random.Generator,
    space: AlignSpace = AlignSpace.INVERSE_DEPTH,
    max_iters: int = RANSAC_MAX_ITERS,
    refit: bool = False,
) -> RansacResult:
    n = len(c)
    if n < RANSAC_SAMPLE_SIZE:
        raise InsufficientData(f"RANSAC needs >= {RANSAC_SAMPLE_SIZE} pairs, got {n}")
    best, best_ratio, best_mask = None, -1.0, None
    for it in range(1, max_iters + 1):
        sample = rng.choice(n, RANSAC_SAMPLE_SIZE, replace=False)
        try:
            hyp = fit_ls(c.subset(sample), space)
        except (SingularSystem, NonPositiveScale):
            continue
        mask = inlier_mask(c, hyp)
        ratio = mask.sum() / n
        if ratio > best_ratio:
            best, best_ratio, best_mask = hyp, ratio, mask
        if ratio > RANSAC_MIN_INLIER_RATIO:
            break
    else:
        it = max_iters
    if best is None:
        raise SingularSystem("every RANSAC sample was degenerate")
    accepted = best_ratio > RANSAC_MIN_INLIER_RATIO
    if refit and best_mask.sum() >= 2:
        best = fit_ls(c.subset(best_mask), space)
    return RansacResult(best, float(best_ratio), it, accepted)


def fit_ransac(
    c: Correspondences,
    seed: int,
    space: AlignSpace = AlignSpace.INVERSE_DEPTH,
    frame_id: int = 0,
    refit: bool = False,
    max_iters: int = RANSAC_MAX_ITERS,
) -> AlignmentParams:
    """Accept the first 5-point hypothesis with inlier ratio above 0.9.

    Falls back to the best-ratio hypothesis after ``max_iters`` draws.
    """
    return ransac_search(c, frame_rng(seed, frame_id), space, max_iters, refit).params


def apply_alignment(pred: FloatMap, p: AlignmentParams) -> tuple[FloatMap, FloatMap]:
    """Return the aligned depth map and its inverse."""
    if pred.kind is not p.space.map_kind:
        raise KindMismatch(f"{p.space.value} alignment needs a {p.space.map_kind.value} prediction")
    aligned = p.scale * pred.values + p.offset
    if p.space is AlignSpace.INVERSE_DEPTH:
        valid = pred.valid & (aligned > 0)
        inv = np.divide(1.0, aligned, out=np.zeros_like(aligned), where=valid)
        valid &= inv > EPS_DEPTH
        z, d = aligned, inv
    else:
        valid = pred.valid & (aligned > EPS_DEPTH)
        d = aligned
        z = np.divide(1.0, aligned, out=np.zeros_like(aligned), where=valid)
    return FloatMap(d, valid, MapKind.DEPTH), FloatMap(z, valid, MapKind.INVERSE_DEPTH)
