"""Evaluation harness: trail matching, recall/precision, SNR and threshold sweeps.

Matching is greedy one-to-one by ascending mean perpendicular distance among
(detection, truth) pairs that satisfy the angle / distance / overlap criteria.
Recall = TP/(TP+FN) and precision = TP/(TP+FP) are evaluated exactly on the
integer counts; sweeps re-run the matching at each axis value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linedet import LineSegment, LsdParams, TrailLine, extend_to_borders, filter_min_length
from .raster import Raster
from .simulator import NoiseModel, PsfModel, TrailSpec, make_star_field, render_trail, solve_peak_for_snr

_SWEEP_AXES = ("snr", "min_length_ratio")


@dataclass(frozen=True)
class MatchCriteria:
    max_angle_diff: float = math.radians(2.0)
    max_perp_distance: float = 5.0
    min_overlap_fraction: float = 0.3

    def __post_init__(self):
        if self.max_angle_diff <= 0.0 or self.max_perp_distance <= 0.0:
            raise ValueError("angle and distance tolerances must be > 0")
        if not (0.0 < self.min_overlap_fraction <= 1.0):
            raise ValueError("min_overlap_fraction must be in (0, 1]")


@dataclass(frozen=True)
class DetectionReport:
    tp: int
    fp: int
    fn: int
    recall: float | None
    precision: float | None

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("counts must be >= 0")


@dataclass(frozen=True)
class SweepCurve:
    axis: str
    points: tuple[tuple[float, object], ...]

    def __post_init__(self):
        if self.axis not in _SWEEP_AXES:
            raise ValueError(f"axis must be one of {_SWEEP_AXES}")
        values = [v for v, _ in self.points]
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("axis values must be strictly increasing")


def _angle_gap(a: float, b: float) -> float:
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


def _signed_distances(line: TrailLine, truth: TrailSpec) -> tuple[float, float]:
    """Signed perpendicular distances of the truth endpoints from the extended line."""
    (x0, y0), (x1, y1) = line.extended_p0, line.extended_p1
    dx, dy = x1 - x0, y1 - y0
    norm = math.hypot(dx, dy)
    nx, ny = -dy / norm, dx / norm
    d0 = (truth.p0[0] - x0) * nx + (truth.p0[1] - y0) * ny
    d1 = (truth.p1[0] - x0) * nx + (truth.p1[1] - y0) * ny
    return d0, d1


def mean_perp_distance(line: TrailLine, truth: TrailSpec) -> float:
    """Mean |perpendicular distance| from the truth segment to the extended line.

    The signed distance varies linearly along the segment, so the mean of its
    absolute value has a closed form on each sign regime.
    """
    d0, d1 = _signed_distances(line, truth)
    if d0 * d1 >= 0.0:
        return (abs(d0) + abs(d1)) / 2.0
    return (d0 * d0 + d1 * d1) / (2.0 * (abs(d0) + abs(d1)))


def band_overlap_fraction(line: TrailLine, truth: TrailSpec) -> float:
    """Fraction of the truth segment within the line's mask_halfwidth band."""
    d0, d1 = _signed_distances(line, truth)
    hw = line.mask_halfwidth
    if d0 == d1:
        return 1.0 if abs(d0) <= hw else 0.0
    # |d0 + t*(d1-d0)| <= hw for t in [0,1]
    lo = (-hw - d0) / (d1 - d0)
    hi = (hw - d0) / (d1 - d0)
    if lo > hi:
        lo, hi = hi, lo
    return max(0.0, min(1.0, hi) - max(0.0, lo))


def _line_angle(line: TrailLine) -> float:
    (x0, y0), (x1, y1) = line.extended_p0, line.extended_p1
    return math.atan2(y1 - y0, x1 - x0) % math.pi


def _truth_angle(truth: TrailSpec) -> float:
    return math.atan2(truth.p1[1] - truth.p0[1], truth.p1[0] - truth.p0[0]) % math.pi


def match_trails(
    detected: list[TrailLine],
    truth: list[TrailSpec],
    criteria: MatchCriteria = MatchCriteria(),
) -> tuple[int, int, int, tuple[tuple[int, int], ...]]:
    """Greedy one-to-one matching by ascending mean perpendicular distance.

    Returns (tp, fp, fn, assignment) with assignment as (detection index,
    truth index) pairs; tp+fn = |truth| and tp+fp = |detected| always hold.
    """
    candidates = []
    for di, line in enumerate(detected):
        for ti, spec in enumerate(truth):
            if _angle_gap(_line_angle(line), _truth_angle(spec)) > criteria.max_angle_diff:
                continue
            dist = mean_perp_distance(line, spec)
            if dist > criteria.max_perp_distance:
                continue
            if band_overlap_fraction(line, spec) < criteria.min_overlap_fraction:
                continue
            candidates.append((dist, di, ti))
    candidates.sort()
    det_used = [False] * len(detected)
    truth_used = [False] * len(truth)
    assignment = []
    for _, di, ti in candidates:
        if det_used[di] or truth_used[ti]:
            continue
        det_used[di] = True
        truth_used[ti] = True
        assignment.append((di, ti))
    tp = len(assignment)
    return tp, len(detected) - tp, len(truth) - tp, tuple(assignment)


def compute_report(tp: int, fp: int, fn: int) -> DetectionReport:
    """Exact rational recall/precision; absent (None) on a zero denominator."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be >= 0")
    recall = tp / (tp + fn) if tp + fn > 0 else None
    precision = tp / (tp + fp) if tp + fp > 0 else None
    return DetectionReport(tp=tp, fp=fp, fn=fn, recall=recall, precision=precision)


def format_report(report: DetectionReport) -> str:
    """Percentages rounded to 2 decimals (4 decimals of the fraction)."""

    def pct(v):
        return "absent" if v is None else f"{100.0 * v:.2f}%"

    return (
        f"TP={report.tp} FP={report.fp} FN={report.fn} "
        f"recall={pct(report.recall)} precision={pct(report.precision)}"
    )


def snr_sweep(
    net,
    lsd: LsdParams,
    snr_values: list[float],
    trials_per_snr: int,
    seed: int,
    psf: PsfModel = PsfModel(4.712, 4.712),
    noise: NoiseModel = NoiseModel(),
    criteria: MatchCriteria = MatchCriteria(),
    n_stars: int = 12,
    mask_halfwidth: float = 5.0,
) -> SweepCurve:
    """Detection rate per SNR over freshly simulated single-trail tiles.

    Each trial draws a star-field background and one random trail scaled to
    the target SNR (zero amplitude at SNR 0), runs the tile detection path,
    and counts the image as detected when the injected trail is matched.
    Reproducible from seed.
    """
    from .pipeline import detect_tile
    from .simulator import _draw_geometry, aperture_from_psf

    if trials_per_snr < 1:
        raise ValueError("trials_per_snr must be >= 1")
    size = net.config.input_size
    aperture = aperture_from_psf(psf)
    points = []
    for si, snr in enumerate(snr_values):
        hits = 0
        for trial in range(trials_per_snr):
            rng = np.random.default_rng([seed, si, trial])
            field, _ = make_star_field(
                size, size, n_stars, psf, noise, seed=int(rng.integers(2**63))
            )
            geometry = _draw_geometry(rng, size, size, psf.fwhm, aperture.half)
            if snr <= 0.0:
                spec = TrailSpec(geometry.p0, geometry.p1, psf.fwhm, peak_amplitude=0.0)
            else:
                peak = solve_peak_for_snr(snr, geometry, psf, noise, field)
                spec = TrailSpec(
                    geometry.p0, geometry.p1, psf.fwhm, peak_amplitude=peak, target_snr=snr
                )
            img, _ = render_trail(field, spec, rng_seed=int(rng.integers(2**63)))
            lines = detect_tile(net, img, lsd, mask_halfwidth=mask_halfwidth)
            tp, _, _, _ = match_trails(lines, [spec], criteria)
            hits += int(tp >= 1)
        points.append((float(snr), hits / trials_per_snr))
    return SweepCurve(axis="snr", points=tuple(points))


def threshold_sweep(
    detections_raw: list[list[LineSegment]],
    truth: list[list[TrailSpec]],
    ratios: list[float],
    criteria: MatchCriteria,
    width: int,
    height: int,
    mask_halfwidth: float = 5.0,
) -> SweepCurve:
    """Reports at each min_length_ratio, filtering the same raw detections.

    detections_raw[i] are the (already merged) segments of image i at ratio 0;
    image_side for the length threshold is the larger frame side.
    """
    if len(detections_raw) != len(truth):
        raise ValueError("detections_raw and truth must align per-image")
    if any(b <= a for a, b in zip(ratios, ratios[1:])):
        raise ValueError("ratios must be strictly increasing")
    side = max(width, height)
    points = []
    for ratio in ratios:
        tp = fp = fn = 0
        for segs, specs in zip(detections_raw, truth):
            kept = filter_min_length(segs, side, ratio)
            lines = [
                extend_to_borders(s, width, height, mask_halfwidth=mask_halfwidth)
                for s in kept
            ]
            t, f, n, _ = match_trails(lines, specs, criteria)
            tp, fp, fn = tp + t, fp + f, fn + n
        points.append((float(ratio), compute_report(tp, fp, fn)))
    return SweepCurve(axis="min_length_ratio", points=tuple(points))


def interpolate_recall_at_precision(curve: SweepCurve, target_precision: float) -> float:
    """Linear interpolation of recall against precision between curve points.

    Walks adjacent point pairs in curve order and interpolates inside the
    first pair whose precision interval contains the target; an exact hit on
    a point returns that point's recall.
    """
    pairs = []
    for _, payload in curve.points:
        if isinstance(payload, DetectionReport):
            if payload.precision is None or payload.recall is None:
                continue
            pairs.append((payload.precision, payload.recall))
    if len(pairs) < 2:
        raise ValueError("curve needs >= 2 points with defined precision and recall")
    for prec, rec in pairs:
        if prec == target_precision:
            return rec
    for (p0, r0), (p1, r1) in zip(pairs, pairs[1:]):
        lo, hi = min(p0, p1), max(p0, p1)
        if lo <= target_precision <= hi:
            t = (target_precision - p0) / (p1 - p0)
            return r0 + t * (r1 - r0)
    raise ValueError(
        f"target precision {target_precision} outside every adjacent curve interval"
    )


def format_sweep_table(curve: SweepCurve) -> str:
    """Plain-text table: threshold, TP, FP, FN, recall, precision per row."""
    lines = ["# threshold TP FP FN recall precision"]
    for value, payload in curve.points:
        if isinstance(payload, DetectionReport):
            rec = "absent" if payload.recall is None else f"{100 * payload.recall:.2f}"
            prec = (
                "absent" if payload.precision is None else f"{100 * payload.precision:.2f}"
            )
            lines.append(
                f"{value:g} {payload.tp} {payload.fp} {payload.fn} {rec} {prec}"
            )
        else:
            lines.append(f"{value:g} {payload:.4f}")
    return "\n".join(lines) + "\n"


def save_curve(curve: SweepCurve, path) -> None:
    """Curve data file: one '(axis value, rate-or-recall)' pair per line."""
    lines = [f"# {curve.axis} value"]
    for value, payload in curve.points:
        if isinstance(payload, DetectionReport):
            val = "nan" if payload.recall is None else f"{payload.recall:.6f}"
        else:
            val = f"{float(payload):.6f}"
        lines.append(f"{value:g} {val}")
    Path(path).write_text("\n".join(lines) + "\n")
