#!/usr/bin/env python3
"""Rate-versus-distance sweeps for both link types (plot-ready CSVs)."""

import argparse
from pathlib import Path

from qkdnet.cli import main as cli_main


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("results/sweeps"))
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()

    for preset in ("hw-qkd-sweep", "hw-mdi-sweep"):
        argv = ["sweep", "--preset", preset, "--out", str(args.out / preset)]
        if args.seed is not None:
            argv += ["--seed", str(args.seed)]
        rc = cli_main(argv)
        if rc != 0:
            raise SystemExit(rc)
    print(f"sweep CSVs under {args.out}")


if __name__ == "__main__":
    main()
