"""Wall-clock benchmarks: per-tile segmentation, per-tile LSD, full-frame scan.

Reports three numbers against their budgets: one 256x256 tile through the
network (budget 2 s), LSD on a tile-sized probability map (budget 0.1 s), and
a full survey frame (9576x6388, 4x5 grid; budget 140 s).  Pass --small to
benchmark a quarter-scale frame instead.
"""

import argparse
import time

import numpy as np

from trailscan.linedet import LsdParams, lsd_detect
from trailscan.pipeline import detect_frame
from trailscan.raster import Raster, make_tile_grid
from trailscan.segnet import NetConfig, build_network, load_checkpoint, segment
from trailscan.simulator import NoiseModel, PsfModel, make_star_field


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--checkpoint", help="trained model (default: fresh weights)")
    parser.add_argument("--small", action="store_true", help="2394x1597 frame instead")
    args = parser.parse_args()

    net = load_checkpoint(args.checkpoint) if args.checkpoint else build_network(NetConfig())
    size = net.config.input_size
    rng = np.random.default_rng(0)

    tile = Raster(rng.poisson(200.0, (size, size)).astype(np.float64))
    segment(net, tile)  # warm-up (lazy torch init)
    t0 = time.perf_counter()
    prob = segment(net, tile)
    t_seg = time.perf_counter() - t0
    print(f"segmentation per tile: {t_seg:.3f} s (budget 2.0)")

    lsd_detect(Raster(prob), LsdParams())  # warm-up (numba compile)
    t0 = time.perf_counter()
    lsd_detect(Raster(prob), LsdParams())
    t_lsd = time.perf_counter() - t0
    print(f"LSD per tile: {t_lsd:.4f} s (budget 0.1)")

    w, h = (2394, 1597) if args.small else (9576, 6388)
    frame, _ = make_star_field(w, h, 120, PsfModel(4.712, 4.712), NoiseModel(), seed=1)
    grid = make_tile_grid(w, h, 4, 5, 0.1)
    t0 = time.perf_counter()
    detection = detect_frame(frame, net, grid, LsdParams(), frame_id="bench")
    t_frame = time.perf_counter() - t0
    budget = 140.0 if not args.small else 140.0 / 16
    print(
        f"full frame {w}x{h}: {t_frame:.1f} s (budget {budget:.1f}), "
        f"{len(detection.merged_trails)} trails, "
        f"stages {' '.join(f'{k}={v:.1f}s' for k, v in detection.timing.items())}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
