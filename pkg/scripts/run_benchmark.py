#!/usr/bin/env python3
"""Small-scale adaptation benchmark: train MSO and DR, compare across suites.

Trains one policy per method at the small scale, runs adaptation campaigns
on the extended / slope / sensor-offset suites, and writes records +
histogram CSVs per suite under the output directory.

Example:
    python scripts/run_benchmark.py --out runs/benchmark --tasks 50
"""

import argparse
import os
import sys

import numpy as np

from metastrat.envs import RangeSpec
from metastrat.harness import build_suite, emit_report, run_campaign
from metastrat.trainers import checkpoint_from_json, checkpoint_to_json, train

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
from train_small import small_config  # noqa: E402


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tasks", type=int, default=50)
    ap.add_argument("--episodes", type=int, default=15)
    ap.add_argument("--iterations", type=int, default=600)
    ap.add_argument("--suites", nargs="+", default=["EXTENDED", "SLOPE", "SENSOR_OFFSET"])
    args = ap.parse_args(argv)
    os.makedirs(args.out, exist_ok=True)

    ckpts = []
    for method in ("mso", "dr"):
        path = os.path.join(args.out, f"{method}_seed{args.seed}.json")
        if os.path.exists(path):
            print(f"reusing {path}")
            ckpts.append(checkpoint_from_json(open(path).read()))
            continue
        print(f"training {method} (seed {args.seed}, {args.iterations} iterations)")
        ckpt = train(small_config(method, args.seed, total_iterations=args.iterations))
        with open(path, "w") as fh:
            fh.write(checkpoint_to_json(ckpt))
        ckpts.append(ckpt)

    base = RangeSpec.training()
    for tag in args.suites:
        suite = build_suite(tag, args.tasks, base, seed=args.seed + 1000)
        report = run_campaign(ckpts, suite, episodes=args.episodes, seed=args.seed + 2000)
        emit_report(report, "CSV", os.path.join(args.out, f"{tag.lower()}_records.csv"))
        emit_report(report, "HISTOGRAM_CSV", os.path.join(args.out, f"{tag.lower()}_histogram.csv"))
        line = " | ".join(
            f"{m}: {agg['mean']:.1f} +/- {agg['std']:.1f}" for m, agg in sorted(report.aggregates.items())
        )
        mso = np.array([r.adapted_return for r in report.records if r.method == "MSO"])
        dr = np.array([r.adapted_return for r in report.records if r.method == "DR"])
        print(f"{tag}: {line} | per-task wins MSO {int((mso > dr).sum())}/{len(mso)}")
    print(f"outputs under {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
