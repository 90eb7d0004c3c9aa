"""Command-line entry point wiring all modules into reproducible workflows.

Subcommands: simulate, train, detect, evaluate, sweep-snr, sweep-threshold.
Every run is driven by one INI config (see config.default_config_text) plus a
few high-traffic flag overrides.  Exit code 0 on success; on failure a single
machine-parseable line `ERROR <category>: <message>` goes to stderr with a
category-specific exit code (config=2, io=3, data=4, runtime=1).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, default_config_text, load_config
from .raster import FORMAT_FITS, FORMAT_FLAT, FORMAT_PGM16, FormatError, Raster, load_raster, make_tile_grid

_SUFFIX_FORMATS = {
    ".trsc": FORMAT_FLAT,
    ".pgm": FORMAT_PGM16,
    ".fits": FORMAT_FITS,
    ".fit": FORMAT_FITS,
}


def _load_frame(path: Path) -> Raster:
    fmt = _SUFFIX_FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise FormatError(f"unrecognized frame format suffix: {path.suffix!r}")
    return load_raster(path, fmt)


def _backgrounds(cfg: RunConfig):
    from .simulator import make_star_field

    fields = []
    for i in range(cfg.simulate.n_backgrounds):
        field, _ = make_star_field(
            cfg.simulate.width,
            cfg.simulate.height,
            cfg.simulate.n_stars,
            cfg.psf,
            cfg.noise,
            seed=cfg.seed * 1000 + i,
        )
        fields.append(field)
    return fields


def cmd_simulate(cfg: RunConfig) -> int:
    from .simulator import generate_dataset

    out = cfg.out_dir / "dataset"
    manifest = generate_dataset(
        backgrounds=_backgrounds(cfg),
        count=cfg.simulate.count,
        snr_range=(cfg.simulate.snr_low, cfg.simulate.snr_high),
        snr_weights=cfg.simulate.snr_weights,
        split_ratio=cfg.simulate.split_ratio,
        seed=cfg.seed,
        out_dir=out,
        psf=cfg.psf,
        noise=cfg.noise,
        trails_per_entry=cfg.simulate.trails_per_entry,
    )
    n_train = len(manifest.subset("train"))
    n_val = len(manifest.subset("validation"))
    print(f"simulate: {len(manifest.entries)} entries ({n_train} train / {n_val} validation) -> {out}")
    return 0


def cmd_train(cfg: RunConfig, manifest_path: Path, resume: bool) -> int:
    from .segnet import (
        TrainRecord,
        build_network,
        load_checkpoint,
        load_train_log,
        save_checkpoint,
        save_train_log,
        train,
    )
    from .simulator import load_manifest

    manifest = load_manifest(manifest_path)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = cfg.out_dir / "model.tsck"
    log_path = cfg.out_dir / "train_log.txt"

    prior = []
    if resume:
        if not ckpt_path.exists():
            raise FileNotFoundError(f"cannot resume: no checkpoint at {ckpt_path}")
        net = load_checkpoint(ckpt_path)
        if log_path.exists():
            prior = load_train_log(log_path)
    else:
        net = build_network(cfg.network)

    net, records = train(net, manifest, cfg.training)
    offset = prior[-1].epoch if prior else 0
    renumbered = [
        TrainRecord(r.epoch + offset, r.train_loss, r.val_loss, r.val_iou, r.wall_clock_s)
        for r in records
    ]
    save_checkpoint(net, ckpt_path)
    save_train_log(prior + renumbered, log_path)
    final = renumbered[-1]
    print(
        f"train: {len(renumbered)} epochs (through {final.epoch}), "
        f"final val_loss={final.val_loss:.4f} val_iou={final.val_iou:.4f} -> {ckpt_path}"
    )
    return 0


def cmd_detect(cfg: RunConfig, checkpoint: Path, frames: list[Path], jobs: int) -> int:
    from .pipeline import detect_frame, write_frame_bundle
    from .segnet import load_checkpoint

    net = load_checkpoint(checkpoint)
    for frame_path in frames:
        frame = _load_frame(frame_path)
        grid = make_tile_grid(
            frame.width, frame.height, cfg.grid.rows, cfg.grid.cols, cfg.grid.overlap
        )
        detection = detect_frame(
            frame,
            net,
            grid,
            cfg.lsd,
            mask_halfwidth=cfg.grid.mask_halfwidth,
            frame_id=frame_path.stem,
            workers=jobs,
        )
        write_frame_bundle(detection, cfg.out_dir)
        print(
            f"detect: {frame_path.name} -> {len(detection.merged_trails)} trails, "
            f"timing {' '.join(f'{k}={v:.2f}s' for k, v in detection.timing.items())}"
        )
    return 0


def cmd_evaluate(
    cfg: RunConfig,
    counts: tuple[int, int, int] | None,
    manifest_path: Path | None,
    detections_dir: Path | None,
) -> int:
    from .evalkit import compute_report, format_report, match_trails
    from .linedet import extend_to_borders, load_segments
    from .simulator import load_manifest

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    report_path = cfg.out_dir / "report.txt"
    if counts is not None:
        report = compute_report(*counts)
    else:
        if manifest_path is None or detections_dir is None:
            raise ValueError("evaluate needs --counts or both --manifest and --detections")
        manifest = load_manifest(manifest_path)
        tp = fp = fn = 0
        for entry in manifest.entries:
            stem = Path(entry.image_path).stem
            seg_file = detections_dir / f"{stem}.txt"
            segs = load_segments(seg_file) if seg_file.exists() else []
            lines = [
                extend_to_borders(
                    s,
                    cfg.simulate.width,
                    cfg.simulate.height,
                    mask_halfwidth=cfg.grid.mask_halfwidth,
                )
                for s in segs
            ]
            t, f, n, _ = match_trails(lines, list(entry.trails), cfg.criteria)
            tp, fp, fn = tp + t, fp + f, fn + n
        report = compute_report(tp, fp, fn)
    line = format_report(report)
    report_path.write_text(line + "\n")
    print(f"evaluate: {line} -> {report_path}")
    return 0


def cmd_sweep_snr(cfg: RunConfig, checkpoint: Path) -> int:
    from .evalkit import save_curve, snr_sweep
    from .segnet import load_checkpoint

    net = load_checkpoint(checkpoint)
    curve = snr_sweep(
        net,
        cfg.lsd,
        list(cfg.sweep.snr_values),
        cfg.sweep.trials_per_snr,
        cfg.seed,
        psf=cfg.psf,
        noise=cfg.noise,
        criteria=cfg.criteria,
        n_stars=cfg.simulate.n_stars,
        mask_halfwidth=cfg.grid.mask_halfwidth,
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.out_dir / "snr_curve.txt"
    save_curve(curve, out)
    for snr, rate in curve.points:
        print(f"sweep-snr: snr={snr:g} rate={rate:.3f}")
    print(f"sweep-snr: curve -> {out}")
    return 0


def cmd_sweep_threshold(cfg: RunConfig, checkpoint: Path, manifest_path: Path) -> int:
    from .evalkit import format_sweep_table, threshold_sweep
    from .linedet import lsd_detect, merge_collinear
    from .raster import FORMAT_FLAT
    from .segnet import load_checkpoint, segment
    from .simulator import load_manifest

    net = load_checkpoint(checkpoint)
    manifest = load_manifest(manifest_path)
    entries = manifest.subset("validation") or manifest.entries
    raw, truth = [], []
    for entry in entries:
        img = load_raster(manifest.resolve(entry.image_path), FORMAT_FLAT)
        prob = segment(net, img)
        raw.append(merge_collinear(lsd_detect(Raster(prob), cfg.lsd)))
        truth.append(list(entry.trails))
    curve = threshold_sweep(
        raw,
        truth,
        list(cfg.sweep.ratios),
        cfg.criteria,
        cfg.simulate.width,
        cfg.simulate.height,
        mask_halfwidth=cfg.grid.mask_halfwidth,
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.out_dir / "threshold_table.txt"
    table = format_sweep_table(curve)
    out.write_text(table)
    print(table, end="")
    print(f"sweep-threshold: table -> {out}")
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trailscan",
        description="Simulate, detect, and evaluate satellite trails in astronomical images.",
    )
    parser.add_argument("--config", type=Path, help="INI config file (defaults built in)")
    parser.add_argument("--seed", type=int, help="override global seed")
    parser.add_argument("--out", type=Path, help="override output directory")
    parser.add_argument(
        "--print-config", action="store_true", help="print the default config and exit"
    )
    sub = parser.add_subparsers(dest="command")

    p_sim = sub.add_parser("simulate", help="render a labeled trail dataset")
    p_sim.add_argument("--count", type=int, help="number of images")

    p_train = sub.add_parser("train", help="train the segmentation network")
    p_train.add_argument("--manifest", type=Path, required=True)
    p_train.add_argument("--epochs", type=int, help="override max epochs")
    p_train.add_argument("--resume", action="store_true", help="continue from checkpoint")

    p_det = sub.add_parser("detect", help="detect trails in full frames")
    p_det.add_argument("--checkpoint", type=Path, required=True)
    p_det.add_argument("--jobs", type=int, default=1, help="tile worker count")
    p_det.add_argument("frames", nargs="+", type=Path)

    p_eval = sub.add_parser("evaluate", help="recall/precision report")
    p_eval.add_argument("--counts", nargs=3, type=int, metavar=("TP", "FP", "FN"))
    p_eval.add_argument("--manifest", type=Path)
    p_eval.add_argument("--detections", type=Path)

    p_snr = sub.add_parser("sweep-snr", help="detection rate vs SNR curve")
    p_snr.add_argument("--checkpoint", type=Path, required=True)
    p_snr.add_argument("--trials", type=int, help="override trials per SNR")

    p_thr = sub.add_parser("sweep-threshold", help="recall/precision vs min-length ratio")
    p_thr.add_argument("--checkpoint", type=Path, required=True)
    p_thr.add_argument("--manifest", type=Path, required=True)

    return parser


def _run(args) -> int:
    overrides: dict[str, dict[str, str]] = {"global": {}}
    if args.seed is not None:
        overrides["global"]["seed"] = str(args.seed)
    if args.out is not None:
        overrides["global"]["out_dir"] = str(args.out)
    if getattr(args, "count", None) is not None:
        overrides["simulate"] = {"count": str(args.count)}
    if getattr(args, "epochs", None) is not None:
        overrides["training"] = {"max_epochs": str(args.epochs)}
    if getattr(args, "trials", None) is not None:
        overrides["sweep"] = {"trials_per_snr": str(args.trials)}
    cfg = load_config(args.config, overrides)

    if args.command == "simulate":
        return cmd_simulate(cfg)
    if args.command == "train":
        return cmd_train(cfg, args.manifest, args.resume)
    if args.command == "detect":
        return cmd_detect(cfg, args.checkpoint, args.frames, args.jobs)
    if args.command == "evaluate":
        counts = tuple(args.counts) if args.counts else None
        return cmd_evaluate(cfg, counts, args.manifest, args.detections)
    if args.command == "sweep-snr":
        return cmd_sweep_snr(cfg, args.checkpoint)
    if args.command == "sweep-threshold":
        return cmd_sweep_threshold(cfg, args.checkpoint, args.manifest)
    raise ValueError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(default_config_text(), end="")
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    try:
        return _run(args)
    except FileNotFoundError as exc:
        print(f"ERROR io: {exc}", file=sys.stderr)
        return 3
    except FormatError as exc:
        print(f"ERROR data: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"ERROR config: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"ERROR runtime: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
