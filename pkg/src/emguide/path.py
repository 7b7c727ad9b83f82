"""Arc-length parameterized reference paths for time-free guidance.

A path maps progress theta in [0, L] (meters along the curve) to a plane
point s(theta) with unit tangent n(theta). Spline paths are piecewise cubics
through the control points (Catmull-Rom tangents); polylines keep exact
corners. The arc-length tables are built once and immutable afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K


class PathError(ValueError):
    """Invalid path construction or query."""


@dataclass(frozen=True)
class ReferencePath:
    kind: str  # "spline" | "polyline" | "point"
    control_points: np.ndarray  # (n, 2)
    seg_coef: np.ndarray  # (n_seg, 2, 4)
    seg_cum: np.ndarray  # (n_seg + 1,)
    seg_quad: np.ndarray  # (n_seg,) quadrature subintervals per segment
    table_theta: np.ndarray = field(repr=False)  # dense samples for scans
    table_points: np.ndarray = field(repr=False)

    @property
    def length(self) -> float:
        return float(self.seg_cum[-1])

    @property
    def table_resolution(self) -> float:
        if len(self.table_theta) < 2:
            return 0.0
        return float(self.table_theta[1] - self.table_theta[0])

    def arrays(self):
        """Raw (seg_coef, seg_cum, seg_quad) for the compiled kernels."""
        return self.seg_coef, self.seg_cum, self.seg_quad


def _catmull_rom_coefficients(points: np.ndarray) -> np.ndarray:
    """Hermite cubics through all points with chord-average tangents."""
    n = len(points)
    tangents = np.empty_like(points)
    tangents[0] = points[1] - points[0]
    tangents[-1] = points[-1] - points[-2]
    if n > 2:
        tangents[1:-1] = 0.5 * (points[2:] - points[:-2])
    coef = np.empty((n - 1, 2, 4))
    for i in range(n - 1):
        p0, p1 = points[i], points[i + 1]
        m0, m1 = tangents[i], tangents[i + 1]
        coef[i, :, 0] = p0
        coef[i, :, 1] = m0
        coef[i, :, 2] = -3 * p0 + 3 * p1 - 2 * m0 - m1
        coef[i, :, 3] = 2 * p0 - 2 * p1 + m0 + m1
    return coef


def _linear_coefficients(points: np.ndarray) -> np.ndarray:
    coef = np.zeros((len(points) - 1, 2, 4))
    coef[:, :, 0] = points[:-1]
    coef[:, :, 1] = points[1:] - points[:-1]
    return coef


def _segment_lengths(coef: np.ndarray):
    """Per-segment arc length with the quadrature resolution frozen in.

    Subdivisions are doubled until the composite rule is converged, so the
    stored (length, n_quad) pair is self-consistent with later inversion.
    """
    nseg = len(coef)
    lengths = np.empty(nseg)
    quads = np.empty(nseg, dtype=np.int64)
    for i in range(nseg):
        n = 1
        prev = K.seg_arc(coef[i], n, 1.0)
        while n < 64:
            cur = K.seg_arc(coef[i], 2 * n, 1.0)
            n *= 2
            converged = abs(cur - prev) <= 1e-13 * max(abs(cur), 1e-12)
            prev = cur
            if converged:
                break
        lengths[i] = prev
        quads[i] = n
    return lengths, quads


def build_path(points, kind: str = "spline") -> ReferencePath:
    """Construct a path through ordered control points.

    kind "spline" is a C1 piecewise cubic; "polyline" connects the points
    with straight segments (corner tangents are averaged on query).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise PathError("need at least 2 control points")
    gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(gaps < 1e-12):
        raise PathError("duplicate consecutive control points")
    if kind == "spline":
        coef = _catmull_rom_coefficients(pts)
    elif kind == "polyline":
        coef = _linear_coefficients(pts)
    else:
        raise PathError(f"unknown path kind {kind!r}")
    lengths, quads = _segment_lengths(coef)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    L = cum[-1]
    n_table = max(64, min(8192, int(math.ceil(L / 5e-4))))
    thetas = np.linspace(0.0, L, n_table + 1)
    table = K.path_eval_batch(coef, cum, quads, thetas)
    return ReferencePath(
        kind=kind, control_points=pts, seg_coef=coef, seg_cum=cum,
        seg_quad=quads, table_theta=thetas, table_points=table,
    )


def point_path(point) -> ReferencePath:
    """Degenerate zero-length path pinned at a single point."""
    p = np.asarray(point, dtype=float).reshape(2)
    coef = np.zeros((1, 2, 4))
    coef[:, :, 0] = p
    coef[0, 0, 1] = 1.0  # tangent convention (+x); arc length stays zero
    cum = np.array([0.0, 0.0])
    quads = np.array([1], dtype=np.int64)
    thetas = np.array([0.0])
    return ReferencePath(
        kind="point", control_points=p.reshape(1, 2), seg_coef=coef, seg_cum=cum,
        seg_quad=quads, table_theta=thetas, table_points=p.reshape(1, 2),
    )


def clamp_progress(path: ReferencePath, theta: float):
    """Clamp theta into [0, L]; returns (clamped, was_out_of_range)."""
    t = min(max(theta, 0.0), path.length)
    return t, t != theta


def _corner_blend(path: ReferencePath, theta: float):
    """Polyline corner tangent: normalized mean of adjacent directions."""
    hit = np.where(np.abs(path.seg_cum[1:-1] - theta) < 1e-12)[0]
    if len(hit) == 0:
        return None
    i = int(hit[0])
    d0 = K.seg_d1(path.seg_coef[i], 1.0)
    d1 = K.seg_d1(path.seg_coef[i + 1], 0.0)
    mean = d0 / np.linalg.norm(d0) + d1 / np.linalg.norm(d1)
    nrm = np.linalg.norm(mean)
    if nrm < 1e-12:  # opposite directions; keep the incoming one
        return d0 / np.linalg.norm(d0)
    return mean / nrm


def evaluate(path: ReferencePath, theta: float, return_clamped: bool = False):
    """Point on the curve at progress theta (clamped into [0, L])."""
    if path.kind == "point":
        p = path.control_points[0].copy()
        return (p, theta != 0.0) if return_clamped else p
    t, clamped = clamp_progress(path, theta)
    pos, _, _ = K.path_eval(*path.arrays(), t)
    return (pos, clamped) if return_clamped else pos


def tangent(path: ReferencePath, theta: float) -> np.ndarray:
    """Unit tangent n = ds/dtheta at progress theta."""
    if path.kind == "point":
        return np.array([1.0, 0.0])
    t, _ = clamp_progress(path, theta)
    if path.kind == "polyline" and 0.0 < t < path.length:
        blended = _corner_blend(path, t)
        if blended is not None:
            return blended
    _, n, _ = K.path_eval(*path.arrays(), t)
    return n


def curvature_vector(path: ReferencePath, theta: float) -> np.ndarray:
    """Second arc-length derivative of the curve (dn/dtheta)."""
    if path.kind == "point":
        return np.zeros(2)
    t, _ = clamp_progress(path, theta)
    _, _, dn = K.path_eval(*path.arrays(), t)
    return dn


def closest_progress(
    path: ReferencePath, point, hint_theta: float, window: float = None
) -> float:
    """Progress of the locally nearest curve point around hint_theta.

    Scans the dense table inside the window, then refines by golden-section.
    window=None scans the whole path (ties still break toward the hint).
    """
    if path.kind == "point":
        return 0.0
    p = np.asarray(point, dtype=float).reshape(2)
    hint, _ = clamp_progress(path, hint_theta)
    if window is None:
        lo, hi = 0.0, path.length
    else:
        lo = max(0.0, hint - 0.5 * window)
        hi = min(path.length, hint + 0.5 * window)
    ts = path.table_theta
    i0, i1 = np.searchsorted(ts, [lo, hi])
    i0 = max(0, i0 - 1)
    i1 = min(len(ts), i1 + 1)
    seg = path.table_points[i0:i1]
    d2 = np.sum((seg - p) ** 2, axis=1)
    # break near-ties toward the hint so self-near branches stay stable
    tie = d2 <= d2.min() * (1.0 + 1e-9) + 1e-18
    cand = np.where(tie)[0]
    best = cand[np.argmin(np.abs(ts[i0 + cand] - hint))]
    step = path.table_resolution or path.length
    a = max(lo, ts[i0 + best] - step)
    b = min(hi, ts[i0 + best] + step)

    def f(t):
        pos, _, _ = K.path_eval(*path.arrays(), t)
        return float((pos[0] - p[0]) ** 2 + (pos[1] - p[1]) ** 2)

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(60):
        if b - a < 1e-12:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def replace_reference(path: ReferencePath, new_points, theta: float, kind: str = None):
    """Swap in new geometry mid-drawing; returns (new_path, remapped_theta).

    The active progress is remapped to the nearest point of the new path,
    with ties broken toward the old progress value.
    """
    new_path = build_path(new_points, kind or path.kind)
    anchor = evaluate(path, theta)
    hint = min(max(theta, 0.0), new_path.length)
    new_theta = closest_progress(new_path, anchor, hint)
    return new_path, new_theta


# --- shape generators ---------------------------------------------------------


def generate_shape(name: str, **params) -> np.ndarray:
    """Built-in test shapes, centered on the origin, sizes in meters."""
    if name == "line":
        length = params.get("length", 0.12)
        n = params.get("n", 17)
        x = np.linspace(-length / 2, length / 2, n)
        return np.column_stack([x, np.zeros_like(x)])
    if name == "circle":
        r = params.get("radius", 0.035)
        n = params.get("n", 64)
        a = np.linspace(0.0, 2 * math.pi, n + 1)
        return np.column_stack([r * np.cos(a), r * np.sin(a)])
    if name == "spiral":
        r0 = params.get("r0", 0.008)
        r1 = params.get("r1", 0.045)
        turns = params.get("turns", 2.5)
        n = params.get("n", 160)
        a = np.linspace(0.0, 2 * math.pi * turns, n)
        r = np.linspace(r0, r1, n)
        return np.column_stack([r * np.cos(a), r * np.sin(a)])
    if name == "sinus":
        amplitude = params.get("amplitude", 0.02)
        wavelength = params.get("wavelength", 0.06)
        cycles = params.get("cycles", 2.0)
        n = params.get("n", 97)
        x = np.linspace(0.0, wavelength * cycles, n) - wavelength * cycles / 2
        y = amplitude * np.sin(2 * math.pi * (x + wavelength * cycles / 2) / wavelength)
        return np.column_stack([x, y])
    raise PathError(f"unknown shape {name!r}")


SHAPE_NAMES = ("line", "circle", "spiral", "sinus")


# --- path file format ----------------------------------------------------------
#
# Plain text: a "kind <spline|polyline>" header line, then one "x y" pair per
# line, both in meters. Blank lines and lines starting with # are ignored.


def save_path_file(filename, points, kind: str = "spline"):
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    with open(filename, "w") as fh:
        fh.write(f"kind {kind}\n")
        for x, y in pts:
            fh.write(f"{float(x):.17g} {float(y):.17g}\n")


def load_path_file(filename) -> ReferencePath:
    kind = "spline"
    pts = []
    with open(filename) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("kind"):
                kind = line.split()[1]
                continue
            x, y = line.split()
            pts.append((float(x), float(y)))
    return build_path(np.array(pts), kind)
