#!/usr/bin/env python3
"""Few-shot calibration study: how does the committee's held-out stress
error move as the calibration budget grows from 1 to 8 replicates per
material?

Writes a CSV (replicates, mean stress error, min, max) and an SVG
curve.  The numbers are recorded for inspection, not thresholded: with
so few calibration rows the trend is noisy by nature.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np  # noqa: E402

from imprint import cli, mfnn, neural  # noqa: E402
from imprint.surrogate import SimSetting, gen_dataset  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="fewshot-out")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--replicates", default="1,2,4,8",
                    help="comma list of replicate budgets to test")
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()

    d = args.out_dir
    os.makedirs(d, exist_ok=True)
    lo_n = 1000 if args.quick else 4000
    epochs = 150 if args.quick else 800
    head_epochs = 120 if args.quick else 1500
    member_n = 12 if args.quick else 150

    print("generating datasets", file=sys.stderr)
    lo = gen_dataset({"ludwik": lo_n}, SimSetting(), base_seed=args.seed)
    hi = SimSetting(fidelity="HI3D")
    hi_train = gen_dataset({"ludwik": 40 if args.quick else 150}, hi,
                           base_seed=args.seed + 1000).records
    hi_val = gen_dataset({"ludwik": 16 if args.quick else 60}, hi,
                         base_seed=args.seed + 2000).records
    exp = gen_dataset({"ludwik": 23}, SimSetting(fidelity="EXP"),
                      base_seed=args.seed + 3000, replicates=8).records

    print("training base model", file=sys.stderr)
    base_cfg = neural.TrainConfig(lr=1e-3, batch_size=64, max_epochs=epochs,
                                  patience=epochs, seed=args.seed)
    base = mfnn.train_base(lo, cfg=base_cfg)
    head_cfg = neural.TrainConfig(lr=1e-3, batch_size=16,
                                  max_epochs=head_epochs,
                                  patience=head_epochs, seed=args.seed)

    budgets = [int(v) for v in args.replicates.split(",")]
    rows = ["replicates,mean_stress_error,min_stress_error,max_stress_error"]
    xs, ys = [], []
    for reps in budgets:
        print(f"calibrating with {reps} replicates", file=sys.stderr)
        report = mfnn.calibrate_committee(
            base, hi_train, hi_val, exp, n_cal=3, replicates=reps,
            head_cfg=head_cfg, member_hi_count=member_n,
            member_seed=500_000 + 17 * reps)
        groups = mfnn.group_exp_records(exp)
        errs = mfnn.evaluate_on_materials(report.committee, groups,
                                          report.test_ids)
        vals = np.array(list(errs.values()))
        rows.append(f"{reps},{float(vals.mean())!r},{float(vals.min())!r},"
                    f"{float(vals.max())!r}")
        xs.append(reps)
        ys.append(float(vals.mean()))
        print(f"  mean stress error {vals.mean():.4f}", file=sys.stderr)

    csv_path = os.path.join(d, "fewshot.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    svg = cli.svg_line_plot(
        [{"x": xs, "y": ys, "label": "mean stress error"}],
        "Held-out stress error vs calibration replicates",
        "replicates per calibration material", "mean relative stress error")
    with open(os.path.join(d, "fewshot.svg"), "w", encoding="utf-8") as fh:
        fh.write(svg)
    print(f"wrote {csv_path}", file=sys.stderr)


if __name__ == "__main__":
    main()
