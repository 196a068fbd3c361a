#!/usr/bin/env python3
"""Accuracy-vs-PNR curves for saved checkpoints under every attack kind.

Loads one or more checkpoints, slices the test split at one SNR, and sweeps
each attack over a PNR grid. Writes a CSV and prints the curves.

Usage:
    python scripts/attack_curves.py --data runs/study/dataset.iqds \\
        --models standard=runs/study/standard.amcm,hardened=runs/study/standard_adv.amcm \\
        --out curves.csv
"""

import argparse
import sys

from modrobust import attack as A
from modrobust import harness as H
from modrobust import model as M
from modrobust import signal as S


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", required=True)
    ap.add_argument("--models", required=True, help="tag=ckpt[,tag=ckpt...]")
    ap.add_argument("--attacks", default="fgm,fgsm,pgd,uap")
    ap.add_argument("--pnr-db", default="-20,-16,-12,-8,-4,0")
    ap.add_argument("--snr-db", type=float, default=10.0)
    ap.add_argument("--train-fraction", type=float, default=0.5)
    ap.add_argument("--split-seed", type=int, default=0)
    ap.add_argument("--max-frames", type=int, default=400)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    ds = S.load_dataset(args.data)
    _, test = S.split(ds, S.SplitSpec(args.train_fraction, args.split_seed))
    models = {}
    for spec in args.models.split(","):
        tag, path = spec.split("=", 1)
        models[tag] = M.load_checkpoint(path)
    attacks = [A.AttackConfig(kind=k, epsilon=1.0) for k in args.attacks.split(",")]
    report = H.compare_report(
        models, attacks, [float(p) for p in args.pnr_db.split(",")], test,
        snr_db=args.snr_db, max_frames=args.max_frames,
    )
    H.export(report, "csv", args.out)
    for row in report.curves:
        print(
            f"{row['model']:>12} {row['attack']:>9} PNR {row['pnr_db']:6.1f} dB "
            f"accuracy {row['accuracy']:.3f}"
        )
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
