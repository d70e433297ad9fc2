#!/usr/bin/env python3
"""Identifiability study driver: trains the forward emulator with
active sampling and sweeps the non-unique ratio curves for all four
feature subsets over the 625-material grid.

The full run takes tens of minutes on one core; --quick cuts the grid
and the emulator budget down to a minute-scale smoke run.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from imprint import cli  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="uniqueness-out")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--jobs", type=int, default=None)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()

    d = args.out_dir
    os.makedirs(d, exist_ok=True)
    seed_file = os.path.join(d, "emulator-seed.jsonl")
    steps = [
        ["gen", "--fidelity", "lo", "--kind", "ludwik",
         "--count", "500", "--seed", str(args.seed), "--out", seed_file],
        ["uniqueness", "--data", seed_file, "--seed", str(args.seed),
         "--subsets", "force+H,pileup3+H,pileup9+H,pileup9+force",
         "--grid", "2" if args.quick else "5",
         "--epochs", "120" if args.quick else "1200",
         "--target-mape", "0.5" if args.quick else "0.02",
         "--budget", "600" if args.quick else "4000",
         "--out", os.path.join(d, "nonunique.csv"),
         "--svg", os.path.join(d, "nonunique.svg")],
    ]
    if args.jobs is not None:
        steps[1] += ["--jobs", str(args.jobs)]
    for step in steps:
        print("+ imprint " + " ".join(step), file=sys.stderr)
        rc = cli.main(step)
        if rc != 0:
            sys.exit(rc)
    print(f"curves in {d}/nonunique.csv", file=sys.stderr)


if __name__ == "__main__":
    main()
