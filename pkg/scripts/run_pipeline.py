#!/usr/bin/env python3
"""End-to-end pipeline recipe: generate the three data tiers, train the
base inverse model, transfer to high fidelity, calibrate the committee
on emulated experiments, and predict the held-out materials.

All artifacts (datasets, models, metrics, manifests, plots) land in the
output directory.  --quick shrinks every stage to a couple of minutes
for a smoke run; the default sizes reproduce the full study.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from imprint import cli  # noqa: E402


def sh(args):
    print("+ imprint " + " ".join(args), file=sys.stderr)
    rc = cli.main(args)
    if rc != 0:
        print(f"step failed with exit code {rc}", file=sys.stderr)
        sys.exit(rc)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="pipeline-out")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--quick", action="store_true",
                    help="small sizes for a fast smoke run")
    args = ap.parse_args()

    d = args.out_dir
    os.makedirs(d, exist_ok=True)
    s = args.seed
    lo_n = 400 if args.quick else 4000
    hi_n = 40 if args.quick else 150
    hi_v = 16 if args.quick else 60
    epochs = 150 if args.quick else 800
    head_epochs = 150 if args.quick else 1500
    members = 12 if args.quick else 150

    lo = os.path.join(d, "lo.jsonl")
    hi = os.path.join(d, "hi.jsonl")
    hiv = os.path.join(d, "hi-val.jsonl")
    exp = os.path.join(d, "exp.jsonl")
    base = os.path.join(d, "base-model.json")
    committee = os.path.join(d, "committee.json")

    sh(["gen", "--fidelity", "lo", "--kind", "ludwik",
        "--count", str(lo_n), "--seed", str(s), "--out", lo])
    sh(["gen", "--fidelity", "hi", "--kind", "ludwik",
        "--count", str(hi_n), "--seed", str(s + 1000), "--out", hi])
    sh(["gen", "--fidelity", "hi", "--kind", "ludwik",
        "--count", str(hi_v), "--seed", str(s + 2000), "--out", hiv])
    sh(["gen", "--fidelity", "exp", "--materials", "23", "--replicates", "8",
        "--seed", str(s + 3000), "--out", exp])
    sh(["train", "--data", lo, "--seed", str(s), "--out", base,
        "--epochs", str(epochs)])
    sh(["transfer", "--base", base, "--data", hi, "--val", hiv,
        "--seed", str(s), "--epochs", str(head_epochs),
        "--out", os.path.join(d, "transfer-model.json")])
    sh(["calibrate", "--base", base, "--hi-data", hi, "--hi-val", hiv,
        "--exp-data", exp, "--materials", "3", "--replicates", "4",
        "--member-count", str(members), "--epochs", str(head_epochs),
        "--seed", str(s), "--out", committee,
        "--svg", os.path.join(d, "calibration-overlay.svg")])
    sh(["predict", "--committee", committee, "--data", exp,
        "--out", os.path.join(d, "predictions.csv"),
        "--svg", os.path.join(d, "predictions.svg")])
    print(f"pipeline complete; see {d}/predictions.csv", file=sys.stderr)


if __name__ == "__main__":
    main()
