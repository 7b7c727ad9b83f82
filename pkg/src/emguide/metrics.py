"""Evaluation measures: resampled path deviation and distance series.

The deviation metric resamples the drawn stroke at equidistant arc-length
steps before averaging point-to-polyline distances, so the number depends
on geometry rather than on drawing speed or sampling rate. It is
directional (drawn -> reference) by default; compute the reverse direction
explicitly when a symmetry check is wanted.
"""

from __future__ import annotations

import numpy as np

from .path import ReferencePath, evaluate
from .simulator import Trace

DEFAULT_SPACING = 5e-4  # [m]


class MetricError(ValueError):
    """Degenerate input to a metric."""


def _as_polyline(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise MetricError("polyline needs at least 2 points")
    return pts


def polyline_length(points) -> float:
    pts = _as_polyline(points)
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def resample_polyline(points, spacing: float) -> np.ndarray:
    """Equidistant arc-length resampling (both endpoints included)."""
    pts = _as_polyline(points)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if not spacing > 0:
        raise MetricError("spacing must be positive")
    if total <= 0:
        raise MetricError("polyline has zero length")
    if spacing >= total:
        raise MetricError("spacing must be smaller than the polyline length")
    n = int(np.floor(total / spacing))
    targets = np.concatenate([np.arange(n + 1) * spacing, [total]])
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    denom = np.where(seg[idx] > 0, seg[idx], 1.0)
    frac = (targets - cum[idx]) / denom
    return pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])


def point_to_polyline_distance(point, polyline) -> float:
    """Exact minimum distance from a point to a polyline."""
    p = np.asarray(point, dtype=float).reshape(2)
    pts = _as_polyline(polyline)
    a = pts[:-1]
    b = pts[1:]
    ab = b - a
    denom = np.sum(ab * ab, axis=1)
    denom = np.where(denom > 0, denom, 1.0)
    t = np.clip(np.sum((p - a) * ab, axis=1) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return float(np.min(np.linalg.norm(proj - p, axis=1)))


def mean_path_deviation(drawn, reference, spacing: float = DEFAULT_SPACING) -> float:
    """Mean distance from the resampled drawn stroke to the reference path."""
    samples = resample_polyline(drawn, spacing)
    ref = _as_polyline(reference)
    a = ref[:-1]
    ab = ref[1:] - a
    denom = np.sum(ab * ab, axis=1)
    denom = np.where(denom > 0, denom, 1.0)
    diff = samples[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("snk,nk->sn", diff, ab) / denom[None, :], 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d = np.linalg.norm(samples[:, None, :] - proj, axis=2)
    return float(np.mean(np.min(d, axis=1)))


def reference_polyline(path: ReferencePath, spacing: float = DEFAULT_SPACING) -> np.ndarray:
    """Dense polyline sampling of a reference path for metric evaluation."""
    n = max(2, int(np.ceil(path.length / spacing)) + 1)
    ts = np.linspace(0.0, path.length, n)
    return np.array([evaluate(path, t) for t in ts])


def setpoint_distance_series(trace: Trace, path: ReferencePath) -> np.ndarray:
    """Per-step |pen - s(theta)| using the controller's own progress."""
    if len(trace) == 0:
        raise MetricError("empty trace")
    pens = trace.pen
    out = np.empty(len(trace))
    for i, theta in enumerate(trace.theta):
        out[i] = np.linalg.norm(pens[i] - evaluate(path, theta))
    return out


def pen_magnet_distance_series(trace: Trace) -> np.ndarray:
    """Per-step |pen - magnet|."""
    if len(trace) == 0:
        raise MetricError("empty trace")
    return np.linalg.norm(trace.pen - trace.magnet, axis=1)


def run_metrics(trace: Trace, path: ReferencePath,
                spacing: float = DEFAULT_SPACING) -> dict:
    """The three per-run measures as a flat record."""
    ref = reference_polyline(path, spacing)
    dev = mean_path_deviation(trace.pen, ref, spacing)
    setpoint = setpoint_distance_series(trace, path)
    penmag = pen_magnet_distance_series(trace)
    return {
        "mean_path_deviation": dev,
        "mean_setpoint_distance": float(np.mean(setpoint)),
        "mean_pen_magnet_distance": float(np.mean(penmag)),
        "max_pen_magnet_distance": float(np.max(penmag)),
        "diverged": trace.diverged,
    }
