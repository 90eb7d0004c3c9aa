"""Reproduce the reference desk-scale model: 375 simulated tiles, CPU training.

Equivalent to running the CLI with the built-in defaults:

    trailscan --seed 2024 --out runs/desk simulate
    trailscan --seed 2024 --out runs/desk train --manifest runs/desk/dataset/manifest.jsonl

Finishes in well under an hour on one core; prints the final validation IoU.
"""

import argparse
from pathlib import Path

from trailscan.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("runs/desk"))
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--epochs", type=int, default=40)
    args = parser.parse_args()

    base = ["--seed", str(args.seed), "--out", str(args.out)]
    code = cli_main([*base, "simulate"])
    if code != 0:
        return code
    manifest = args.out / "dataset" / "manifest.jsonl"
    return cli_main(
        [*base, "train", "--manifest", str(manifest), "--epochs", str(args.epochs)]
    )


if __name__ == "__main__":
    raise SystemExit(main())
