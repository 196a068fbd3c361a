#!/usr/bin/env python3
"""Full desk-scale robustness study: train/distill/prune the model taxonomy,
harden each variant, and sweep PGD over a PNR grid.

Produces report.json / report.csv plus all intermediate checkpoints under
--out-dir. With default settings this takes a few minutes on a laptop CPU;
scale --per-cell and --epochs up for tighter numbers.

Usage:
    python scripts/reproduce_study.py --out-dir runs/study --seed 0
"""

import argparse
import json
import sys
import time

from modrobust.harness import run_pipeline


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--per-cell", type=int, default=500)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--at-epochs", type=int, default=5)
    ap.add_argument("--eta", type=float, default=1.5)
    ap.add_argument("--probe", type=int, default=768)
    ap.add_argument("--pnr-db", default="-20,-16,-12,-8,-4,0")
    args = ap.parse_args()

    config = {
        "seed": args.seed,
        "dataset": {
            "classes": ["BPSK", "QPSK", "PAM4", "GFSK"],
            "snr_db": [10.0],
            "per_cell": args.per_cell,
        },
        "train": {"epochs": args.epochs},
        "distill": {"epochs": args.epochs, "temperature": 10.0, "alpha": 0.1},
        "prune": {"eta": args.eta, "probe": args.probe},
        "advtrain": {"epochs": args.at_epochs, "pnr_db": -10.0, "pgd_iters": 10},
        "eval": {
            "attacks": ["pgd"],
            "pnr_db": [float(p) for p in args.pnr_db.split(",")],
            "snr_db": 10.0,
            "max_frames": 400,
        },
    }
    t0 = time.time()
    report = run_pipeline(config, args.out_dir)
    print(f"done in {time.time() - t0:.0f}s")
    for tag, row in sorted(report.models.items()):
        print(f"  {tag:22s} clean accuracy {row['clean_accuracy']:.3f}")
    print(f"artifacts in {args.out_dir}")
    print(json.dumps(report.config_echo["pipeline"], indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
