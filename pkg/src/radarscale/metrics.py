"""Depth error metrics with range capping.

Depth errors are reported in millimeters, inverse-depth errors in 1/km.
Sums use exactly rounded summation so the result does not depend on pixel
order or on how the domain was selected.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .core import EmptyDomain, FloatMap, MapKind, require_kind, require_same_shape

DELTA1_THRESHOLD = 1.25
DEFAULT_CAPS = (50.0, 70.0, 80.0)


@dataclass(frozen=True)
class MetricsReport:
    range_cap: float
    n_pixels: int
    mae: float
    rmse: float
    imae: float
    irmse: float
    absrel: float
    sqrel: float
    delta1: float


CSV_COLUMNS = tuple(f.name for f in fields(MetricsReport))


def _error_terms(d_hat: FloatMap, d_gt: FloatMap):
    require_kind(d_hat, MapKind.DEPTH)
    require_kind(d_gt, MapKind.DEPTH)
    require_same_shape(d_hat, d_gt)
    dom = d_hat.valid & d_gt.valid & (d_gt.values > 0)
    pred = d_hat.values[dom]
    gt = d_gt.values[dom]
    diff = pred - gt
    idiff = 1.0 / pred - 1.0 / gt
    ratio = np.maximum(pred / gt, gt / pred)
    return gt, {
        "abs": np.abs(diff),
        "sq": diff * diff,
        "iabs": np.abs(idiff),
        "isq": idiff * idiff,
        "rel": np.abs(diff) / gt,
        "sqrel": diff * diff / gt,
        "d1": (ratio < DELTA1_THRESHOLD).astype(np.float64),
    }


def _report(cap: float, terms: dict, sel: np.ndarray) -> MetricsReport:
    n = int(sel.sum())
    if n == 0:
        raise EmptyDomain(f"no evaluable pixel within {cap} m")

    def mean(key):
        return math.fsum(terms[key][sel]) / n

    return MetricsReport(
        range_cap=float(cap),
        n_pixels=n,
        mae=1000.0 * mean("abs"),
        rmse=1000.0 * math.sqrt(mean("sq")),
        imae=1000.0 * mean("iabs"),
        irmse=1000.0 * math.sqrt(mean("isq")),
        absrel=mean("rel"),
        sqrel=1000.0 * mean("sqrel"),
        delta1=mean("d1"),
    )


def evaluate(d_hat: FloatMap, d_gt: FloatMap, range_cap: float = 80.0) -> MetricsReport:
    """Metrics over pixels valid in both maps with ``0 < d_gt <= range_cap``."""
    gt, terms = _error_terms(d_hat, d_gt)
    return _report(range_cap, terms, gt <= range_cap)


def evaluate_ranges(d_hat: FloatMap, d_gt: FloatMap, caps=DEFAULT_CAPS) -> list[MetricsReport]:
    """One report per cap, sharing a single pass of per-pixel error terms."""
    gt, terms = _error_terms(d_hat, d_gt)
    return [_report(cap, terms, gt <= cap) for cap in caps]


def reports_to_csv(rows, extra_columns=()) -> str:
    """CSV text; ``rows`` holds ``(extras_tuple, MetricsReport)`` pairs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(extra_columns) + list(CSV_COLUMNS))
    for extras, rep in rows:
        w.writerow(list(extras) + [_fmt(v) for v in astuple(rep)])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)
