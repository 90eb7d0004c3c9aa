"""Line-segment detection over segmentation maps, plus trail-level postprocessing.

Wraps the LSD core with the package-wide edge-based coordinate convention
(image domain [0, W] x [0, H], pixel centers at half-integers), filters and
merges the raw segments, extends them across the frame, and rasterizes trail
masks. A Hough-transform detector is included as an evaluation baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import lsd
from .raster import BinaryMask, Raster

_TWO_PI = 2.0 * math.pi


def _mod_pi(angle: float) -> float:
    a = angle % math.pi
    return a if a < math.pi else 0.0


def _angle_gap(a: float, b: float) -> float:
    """Distance between undirected angles, in [0, pi/2]."""
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


@dataclass(frozen=True)
class LsdParams:
    """Detector settings; defaults follow the reference parameterization."""

    grad_threshold: float | None = None  # None derives quant / sin(tolerance)
    angle_tolerance: float = math.radians(22.5)
    nfa_epsilon: float = 1.0
    min_length_ratio: float = 0.12
    scale: float = 0.8

    def __post_init__(self):
        if not (0.0 < self.angle_tolerance < math.pi / 2):
            raise ValueError("angle_tolerance must be in (0, pi/2)")
        if not (0.0 <= self.min_length_ratio <= 1.0):
            raise ValueError("min_length_ratio must be in [0, 1]")
        if self.nfa_epsilon <= 0.0:
            raise ValueError("nfa_epsilon must be > 0")
        if self.scale <= 0.0:
            raise ValueError("scale must be > 0")

    @property
    def precision(self) -> float:
        return self.angle_tolerance / math.pi


@dataclass(frozen=True)
class LineSegment:
    """Detected segment with subpixel endpoints in edge-based coordinates."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    width: float = 1.0
    angle: float = 0.0
    nfa_log10: float = 0.0

    def __post_init__(self):
        if self.length == 0.0:
            raise ValueError("zero-length segment")
        want = _mod_pi(math.atan2(self.p1[1] - self.p0[1], self.p1[0] - self.p0[0]))
        if _angle_gap(self.angle, want) > 1e-6:
            raise ValueError("angle inconsistent with endpoints")

    @classmethod
    def from_endpoints(cls, p0, p1, width: float = 1.0, nfa_log10: float = 0.0):
        angle = _mod_pi(math.atan2(p1[1] - p0[1], p1[0] - p0[0]))
        return cls(p0=tuple(p0), p1=tuple(p1), width=width, angle=angle, nfa_log10=nfa_log10)

    @property
    def length(self) -> float:
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])

    @property
    def midpoint(self) -> tuple[float, float]:
        return (0.5 * (self.p0[0] + self.p1[0]), 0.5 * (self.p0[1] + self.p1[1]))


@dataclass(frozen=True)
class TrailLine:
    """A segment extended to span the full frame, with a masking halfwidth."""

    segment: LineSegment
    extended_p0: tuple[float, float]
    extended_p1: tuple[float, float]
    mask_halfwidth: float

    def __post_init__(self):
        for q in (self.segment.p0, self.segment.p1):
            if _point_line_distance(q, self.extended_p0, self.extended_p1) > 0.5:
                raise ValueError("segment strays from its extended line")


def _point_line_distance(q, a, b) -> float:
    dx, dy = b[0] - a[0], b[1] - a[1]
    norm = math.hypot(dx, dy)
    if norm == 0.0:
        return math.hypot(q[0] - a[0], q[1] - a[1])
    return abs((q[0] - a[0]) * dy - (q[1] - a[1]) * dx) / norm


def _to_detector_array(img) -> np.ndarray:
    if isinstance(img, BinaryMask):
        return img.bits.astype(np.float64) * 255.0
    if isinstance(img, Raster):
        data = img.pixels.astype(np.float64)
    else:
        data = np.asarray(img, dtype=np.float64)
    # probability maps in [0, 1] get the detector's nominal dynamic range
    if data.size and 0.0 <= data.min() and data.max() <= 1.0:
        data = data * 255.0
    return data


def lsd_detect(img, params: LsdParams = LsdParams()) -> list[LineSegment]:
    """Detect line segments; returns them sorted by decreasing length.

    Accepts a Raster, a BinaryMask (treated as a 0/255 image), or a bare
    array. Probability maps in [0, 1] are scaled to [0, 255] first. Every
    returned segment has NFA below params.nfa_epsilon.
    """
    data = _to_detector_array(img)
    if min(data.shape) < 8:
        raise ValueError("image sides must be >= 8 px")
    raw = lsd.detect_raw(
        data,
        scale=params.scale,
        angle_tolerance_deg=math.degrees(params.angle_tolerance),
        grad_threshold=params.grad_threshold,
        log_eps=-math.log10(params.nfa_epsilon),
    )
    segments = [
        LineSegment.from_endpoints(
            (row[0] + 0.5, row[1] + 0.5),
            (row[2] + 0.5, row[3] + 0.5),
            width=float(row[4]),
            nfa_log10=float(row[6]),
        )
        for row in raw
    ]
    segments.sort(key=lambda s: s.length, reverse=True)
    return segments


def filter_min_length(
    segments: list[LineSegment], image_side: float, min_length_ratio: float
) -> list[LineSegment]:
    """Keep segments of length >= min_length_ratio * image_side, order preserved."""
    if not (0.0 <= min_length_ratio <= 1.0):
        raise ValueError("min_length_ratio must be in [0, 1]")
    threshold = min_length_ratio * image_side
    return [s for s in segments if s.length >= threshold]


def merge_collinear(
    segments: list[LineSegment],
    angle_tol: float = math.radians(1.0),
    offset_tol: float = 3.0,
) -> list[LineSegment]:
    """Merge segments lying on one infinite line (within angle_tol and offset_tol).

    offset_tol is the allowed deviation of each member from the cluster's
    common (length-weighted mean) line, so two segments may sit up to
    2*offset_tol apart and still share a line that is within offset_tol of
    both.  Fragmented detections of a single trail — including the two flank
    responses of a ridge profile, which straddle the ridge centerline — become
    one segment on the weighted average line, spanning the extreme endpoint
    projections.
    """
    order = sorted(range(len(segments)), key=lambda i: segments[i].length, reverse=True)
    assigned = [False] * len(segments)
    merged: list[LineSegment] = []
    for i in order:
        if assigned[i]:
            continue
        seed = segments[i]
        cluster = [seed]
        assigned[i] = True
        for j in order:
            if assigned[j]:
                continue
            cand = segments[j]
            if _angle_gap(seed.angle, cand.angle) > angle_tol:
                continue
            if _point_line_distance(cand.midpoint, seed.p0, seed.p1) > 2.0 * offset_tol:
                continue
            cluster.append(cand)
            assigned[j] = True
        if len(cluster) == 1:
            merged.append(seed)
            continue
        # length-weighted mean line: direction via doubled-angle circular mean
        wsum = sum(s.length for s in cluster)
        cs = sum(s.length * math.cos(2.0 * s.angle) for s in cluster)
        sn = sum(s.length * math.sin(2.0 * s.angle) for s in cluster)
        theta = _mod_pi(0.5 * math.atan2(sn, cs))
        px = sum(s.length * s.midpoint[0] for s in cluster) / wsum
        py = sum(s.length * s.midpoint[1] for s in cluster) / wsum
        dx, dy = math.cos(theta), math.sin(theta)
        ts = [
            (q[0] - px) * dx + (q[1] - py) * dy
            for s in cluster
            for q in (s.p0, s.p1)
        ]
        t0, t1 = min(ts), max(ts)
        merged.append(
            LineSegment.from_endpoints(
                (px + t0 * dx, py + t0 * dy),
                (px + t1 * dx, py + t1 * dy),
                width=max(s.width for s in cluster),
                nfa_log10=max(s.nfa_log10 for s in cluster),
            )
        )
    merged.sort(key=lambda s: s.length, reverse=True)
    return merged


def _clip_infinite_line(px, py, dx, dy, x0, y0, x1, y1):
    """Intersection t-range of point + t*dir with [x0,x1]x[y0,y1], or None."""
    t0, t1 = -math.inf, math.inf
    for d, q, lo, hi in ((dx, px, x0, x1), (dy, py, y0, y1)):
        if d == 0.0:
            if q < lo or q > hi:
                return None
            continue
        ta, tb = (lo - q) / d, (hi - q) / d
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
    if not (t0 < math.inf and t1 > -math.inf) or t0 > t1:
        return None
    return t0, t1


def _snap_to_border(v: float, lo: float, hi: float) -> float:
    if abs(v - lo) < 1e-9:
        return lo
    if abs(v - hi) < 1e-9:
        return hi
    return min(max(v, lo), hi)


def extend_to_borders(
    seg: LineSegment, width: int, height: int, mask_halfwidth: float = 5.0
) -> TrailLine:
    """Extend the segment's infinite line to its two border intersections."""
    dx, dy = seg.p1[0] - seg.p0[0], seg.p1[1] - seg.p0[1]
    norm = math.hypot(dx, dy)
    dx, dy = dx / norm, dy / norm
    span = _clip_infinite_line(seg.p0[0], seg.p0[1], dx, dy, 0.0, 0.0, float(width), float(height))
    if span is None:
        raise ValueError("segment line does not intersect the image rectangle")
    t0, t1 = span
    e0 = (
        _snap_to_border(seg.p0[0] + t0 * dx, 0.0, float(width)),
        _snap_to_border(seg.p0[1] + t0 * dy, 0.0, float(height)),
    )
    e1 = (
        _snap_to_border(seg.p0[0] + t1 * dx, 0.0, float(width)),
        _snap_to_border(seg.p0[1] + t1 * dy, 0.0, float(height)),
    )
    return TrailLine(segment=seg, extended_p0=e0, extended_p1=e1, mask_halfwidth=mask_halfwidth)


def trail_mask(lines: list[TrailLine], width: int, height: int) -> BinaryMask:
    """Pixels whose centers lie within mask_halfwidth of any extended line."""
    bits = np.zeros((height, width), dtype=bool)
    for line in lines:
        if line.mask_halfwidth < 1.0:
            raise ValueError("mask_halfwidth must be >= 1")
    px = np.arange(width, dtype=np.float64) + 0.5
    strip = 256
    for row0 in range(0, height, strip):
        row1 = min(height, row0 + strip)
        py = (np.arange(row0, row1, dtype=np.float64) + 0.5)[:, None]
        for line in lines:
            x0, y0 = line.extended_p0
            vx, vy = line.extended_p1[0] - x0, line.extended_p1[1] - y0
            seg2 = vx * vx + vy * vy
            if seg2 == 0.0:
                continue
            t = np.clip(((px - x0) * vx + (py - y0) * vy) / seg2, 0.0, 1.0)
            dxp = px - (x0 + t * vx)
            dyp = py - (y0 + t * vy)
            close = dxp * dxp + dyp * dyp <= line.mask_halfwidth**2
            bits[row0:row1] |= close
    return BinaryMask(bits)


def hough_detect(
    mask: BinaryMask, angle_bins: int, rho_bins: int, vote_threshold: int
) -> list[LineSegment]:
    """Hough-transform baseline: peak (rho, theta) cells as clipped segments.

    Accumulates votes of true pixels over angle_bins x rho_bins cells, keeps
    3x3 local maxima with at least vote_threshold votes, and converts each to
    a segment clipped to the bounding box of the true pixels. Returned
    nfa_log10 carries the vote count; ordering is by votes, descending.
    """
    if angle_bins < 1 or rho_bins < 1:
        raise ValueError("bins must be >= 1")
    ys, xs = np.nonzero(mask.bits)
    if xs.size == 0:
        return []
    from scipy.ndimage import maximum_filter

    pts_x = xs + 0.5
    pts_y = ys + 0.5
    diag = math.hypot(mask.width, mask.height)
    rho_edges = np.linspace(-diag, diag, rho_bins + 1)
    thetas = (np.arange(angle_bins) + 0.5) * math.pi / angle_bins
    acc = np.zeros((angle_bins, rho_bins), dtype=np.int64)
    for i, th in enumerate(thetas):
        rho = pts_x * math.cos(th) + pts_y * math.sin(th)
        acc[i], _ = np.histogram(rho, bins=rho_edges)
    peaks_mask = (acc == maximum_filter(acc, size=3, mode="nearest")) & (acc >= vote_threshold)
    peaks = np.argwhere(peaks_mask)
    if peaks.size == 0:
        return []
    bx0, bx1 = float(xs.min()), float(xs.max() + 1)
    by0, by1 = float(ys.min()), float(ys.max() + 1)
    out = []
    for ti, ri in sorted(peaks, key=lambda ij: -acc[ij[0], ij[1]]):
        theta = float(thetas[ti])
        rho = 0.5 * (rho_edges[ri] + rho_edges[ri + 1])
        # line: x cos(theta) + y sin(theta) = rho; direction is the normal rotated
        bx, by = rho * math.cos(theta), rho * math.sin(theta)
        dx, dy = -math.sin(theta), math.cos(theta)
        span = _clip_infinite_line(bx, by, dx, dy, bx0, by0, bx1, by1)
        if span is None:
            continue
        t0, t1 = span
        if t1 - t0 <= 0.0:
            continue
        out.append(
            LineSegment.from_endpoints(
                (bx + t0 * dx, by + t0 * dy),
                (bx + t1 * dx, by + t1 * dy),
                width=1.0,
                nfa_log10=float(acc[ti, ri]),
            )
        )
    return out


def save_segments(segments: list[LineSegment], path) -> None:
    """One segment per line: x0 y0 x1 y1 width nfa_log10."""
    lines = ["# x0 y0 x1 y1 width nfa_log10"]
    for s in segments:
        lines.append(
            f"{s.p0[0]:.6f} {s.p0[1]:.6f} {s.p1[0]:.6f} {s.p1[1]:.6f} "
            f"{s.width:.6f} {s.nfa_log10:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_segments(path) -> list[LineSegment]:
    segments = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        x0, y0, x1, y1, width, nfa = (float(v) for v in line.split())
        segments.append(LineSegment.from_endpoints((x0, y0), (x1, y1), width, nfa))
    return segments
