"""Detection rate as a function of trail SNR for a trained checkpoint.

Runs fresh single-trail simulations at each SNR (100 trials per point by
default) through the tile detection path and prints the rate table.  SNR 0
rows are pure-background controls, so their "rate" is a false-alarm rate.
"""

import argparse
from pathlib import Path

from trailscan.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("checkpoint", type=Path)
    parser.add_argument("--out", type=Path, default=Path("runs/sweep"))
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--trials", type=int, default=100)
    args = parser.parse_args()

    return cli_main(
        [
            "--seed",
            str(args.seed),
            "--out",
            str(args.out),
            "sweep-snr",
            "--checkpoint",
            str(args.checkpoint),
            "--trials",
            str(args.trials),
        ]
    )


if __name__ == "__main__":
    raise SystemExit(main())
