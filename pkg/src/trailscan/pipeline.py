"""Full-frame trail detection: tile, resample, segment, line-detect, merge.

A camera frame is cut into an overlapping tile grid, each tile is resampled
to the network's input size and segmented, line segments found on the
probability maps are mapped back into frame coordinates, merged across tiles
by the collinearity rule, and extended to the frame borders to produce the
final trail mask.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linedet import (
    LineSegment,
    LsdParams,
    TrailLine,
    extend_to_borders,
    filter_min_length,
    lsd_detect,
    merge_collinear,
    save_segments,
    trail_mask,
)
from .raster import BinaryMask, Raster, TileGrid, save_raster
from .segnet import TrailNet, segment

_BORDER_EPS = 1e-6
_DEFAULT_MASK_HALFWIDTH = 5.0


@dataclass(frozen=True)
class FrameDetection:
    frame_id: str
    frame_width: int
    frame_height: int
    tile_results: tuple[tuple[tuple[int, int, int, int], tuple[LineSegment, ...]], ...]
    merged_trails: tuple[TrailLine, ...]
    mask: BinaryMask
    timing: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.mask.bits.shape != (self.frame_height, self.frame_width):
            raise ValueError("mask dimensions must equal frame dimensions")
        for trail in self.merged_trails:
            for x, y in (trail.extended_p0, trail.extended_p1):
                on_x = abs(x) <= _BORDER_EPS or abs(x - self.frame_width) <= _BORDER_EPS
                on_y = abs(y) <= _BORDER_EPS or abs(y - self.frame_height) <= _BORDER_EPS
                if not (on_x or on_y):
                    raise ValueError(f"extended endpoint ({x}, {y}) not on frame border")


def coordinate_map(
    point: tuple[float, float],
    box: tuple[int, int, int, int],
    tile_size: int,
) -> tuple[float, float]:
    """Map a tile-space point into frame space (inverts crop + resample)."""
    x0, y0, x1, y1 = box
    sx = (x1 - x0) / tile_size
    sy = (y1 - y0) / tile_size
    return (x0 + point[0] * sx, y0 + point[1] * sy)


def tile_coordinate_map(
    point: tuple[float, float],
    box: tuple[int, int, int, int],
    tile_size: int,
) -> tuple[float, float]:
    """Inverse of coordinate_map: frame-space point into tile space."""
    x0, y0, x1, y1 = box
    sx = tile_size / (x1 - x0)
    sy = tile_size / (y1 - y0)
    return ((point[0] - x0) * sx, (point[1] - y0) * sy)


def detect_tile(
    net: TrailNet,
    tile: Raster,
    lsd: LsdParams = LsdParams(),
    mask_halfwidth: float = _DEFAULT_MASK_HALFWIDTH,
) -> list[TrailLine]:
    """Single-tile detection path: segment, line-detect, merge, filter, extend.

    The probability map (not the binary mask) feeds the line detector; the
    detector sees the segmented band's two edges as parallel segments about
    one band-width apart, so the merge tolerance is the band halfwidth.
    Merged collinear segments shorter than min_length_ratio x tile side are
    dropped, the rest are extended to the tile borders.
    """
    prob = segment(net, tile)
    segs = lsd_detect(Raster(prob), lsd)
    merged = merge_collinear(segs, offset_tol=mask_halfwidth)
    kept = filter_min_length(merged, tile.width, lsd.min_length_ratio)
    return [
        extend_to_borders(s, tile.width, tile.height, mask_halfwidth=mask_halfwidth)
        for s in kept
    ]


def _detect_one_box(net, frame, box, lsd):
    from .raster import resample

    x0, y0, x1, y1 = box
    size = net.config.input_size
    crop = Raster(frame.pixels[y0:y1, x0:x1])
    tile = crop if crop.pixels.shape == (size, size) else resample(crop, size, size)
    prob = segment(net, tile)
    segs = lsd_detect(Raster(prob), lsd)
    return box, tuple(filter_min_length(segs, size, lsd.min_length_ratio))


def detect_frame(
    frame: Raster,
    net: TrailNet,
    grid: TileGrid,
    lsd: LsdParams = LsdParams(),
    mask_halfwidth: float = _DEFAULT_MASK_HALFWIDTH,
    frame_id: str = "frame",
    workers: int = 1,
) -> FrameDetection:
    """Detect trails across a full frame through the overlap-tiled path.

    Per-tile segments are prefiltered at tile scale (min_length_ratio x input
    size), mapped through the resampling transform into frame coordinates,
    merged with the collinearity rule at frame-scaled tolerances, filtered
    again at frame scale (min_length_ratio x larger frame side, the same
    threshold the evaluation protocol applies), extended to the frame
    borders, and rasterized into the frame-resolution mask.  Results are
    deterministic: tile results are sorted by box before merging.
    """
    if grid.frame_width != frame.width or grid.frame_height != frame.height:
        raise ValueError(
            f"grid is for {grid.frame_width}x{grid.frame_height}, "
            f"frame is {frame.width}x{frame.height}"
        )
    size = net.config.input_size
    timing: dict[str, float] = {}

    t0 = time.perf_counter()
    boxes = sorted(grid.tile_boxes)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda b: _detect_one_box(net, frame, b, lsd), boxes))
    else:
        results = [_detect_one_box(net, frame, b, lsd) for b in boxes]
    results.sort(key=lambda r: r[0])
    timing["tiles"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    scales = []
    mapped: list[LineSegment] = []
    for box, segs in results:
        x0, y0, x1, y1 = box
        scale = math.sqrt((x1 - x0) * (y1 - y0)) / size
        scales.append(scale)
        for s in segs:
            mapped.append(
                LineSegment.from_endpoints(
                    coordinate_map(s.p0, box, size),
                    coordinate_map(s.p1, box, size),
                    width=s.width * scale,
                    nfa_log10=s.nfa_log10,
                )
            )
    mean_scale = float(np.mean(scales)) if scales else 1.0
    merged = merge_collinear(mapped, offset_tol=mask_halfwidth * mean_scale)
    kept = filter_min_length(merged, max(frame.width, frame.height), lsd.min_length_ratio)
    trails = tuple(
        extend_to_borders(s, frame.width, frame.height, mask_halfwidth=mask_halfwidth)
        for s in kept
    )
    timing["merge"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    mask = trail_mask(list(trails), frame.width, frame.height)
    timing["mask"] = time.perf_counter() - t0

    return FrameDetection(
        frame_id=frame_id,
        frame_width=frame.width,
        frame_height=frame.height,
        tile_results=tuple(results),
        merged_trails=trails,
        mask=mask,
        timing=timing,
    )


def flag_sources(
    catalog: list[tuple[float, float]],
    detection: FrameDetection,
) -> list[tuple[int, bool]]:
    """Flag each catalog source whose position falls inside the trail mask."""
    bits = detection.mask.bits
    h, w = bits.shape
    out = []
    for i, (x, y) in enumerate(catalog):
        if not (0.0 <= x <= w and 0.0 <= y <= h):
            raise ValueError(f"source {i} at ({x}, {y}) outside frame bounds")
        ix = min(int(x), w - 1)
        iy = min(int(y), h - 1)
        out.append((i, bool(bits[iy, ix])))
    return out


def write_frame_bundle(detection: FrameDetection, out_dir) -> None:
    """Emit the per-frame output bundle: mask raster, trail list, timing report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .raster import FORMAT_FLAT

    save_raster(
        Raster(detection.mask.bits.astype(np.float32)),
        out_dir / f"{detection.frame_id}_mask.trsc",
        FORMAT_FLAT,
        flat_dtype="uint16",
    )
    extended = [
        LineSegment.from_endpoints(
            t.extended_p0,
            t.extended_p1,
            width=t.segment.width,
            nfa_log10=t.segment.nfa_log10,
        )
        for t in detection.merged_trails
    ]
    save_segments(extended, out_dir / f"{detection.frame_id}_trails.txt")
    lines = [f"{stage} {seconds:.3f}" for stage, seconds in detection.timing.items()]
    (out_dir / f"{detection.frame_id}_timing.txt").write_text("\n".join(lines) + "\n")
