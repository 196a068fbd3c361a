#!/usr/bin/env python3
"""Sparsity/accuracy trade-off of the constrained-L1 pruner as eta varies.

Trains one desk-scale student, then prunes fc1 at a grid of eta values
expressed as fractions of ||Y_k||_F on the (normalized) probe set. Prints a
table of sparsity, probe residual, and clean test accuracy per eta.

Usage:
    python scripts/eta_sweep.py --per-cell 500 --fracs 0.02,0.05,0.1,0.2
"""

import argparse
import sys
import time

import numpy as np

from modrobust import model as M
from modrobust import prune as P
from modrobust import signal as S


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--per-cell", type=int, default=500)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--probe", type=int, default=768)
    ap.add_argument("--fracs", default="0.02,0.05,0.1,0.2")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    gen = S.GeneratorConfig(
        classes=("BPSK", "QPSK", "PAM4", "GFSK"),
        snr_grid_db=(10.0,),
        frames_per_cell=args.per_cell,
        seed=args.seed,
    )
    train, test = S.split(S.generate_dataset(gen), S.SplitSpec(0.5, seed=args.seed))
    model = M.build_model(M.student_arch(len(gen.classes), "desk"), args.seed)
    M.train_standard(model, train, M.TrainConfig(epochs=args.epochs, seed=args.seed))
    base = M.accuracy(model, test)["overall"]
    print(f"unpruned clean accuracy {base:.3f}")

    probe = P._stratified_probe(train, args.probe, args.seed)
    y_prev, y_k = P.collect_layer_activations(model, probe, "fc1")
    norms = np.linalg.norm(y_prev, axis=0)
    scale = float(np.linalg.norm(y_k / np.where(norms > 0, norms, 1.0)))
    print(f"||Y_k||_F on the normalized probe: {scale:.3f}")
    print(f"{'eta':>8} {'sparsity':>9} {'residual':>9} {'conv':>5} {'acc':>6} {'time':>6}")
    for frac in (float(f) for f in args.fracs.split(",")):
        eta = frac * scale
        t0 = time.time()
        res = P.prune_layer(
            model, train,
            P.PruneConfig(eta=eta, probe_size=args.probe, max_iters=1500, seed=args.seed),
        )
        acc = M.accuracy(P.apply_pruning(model, "fc1", res), test)["overall"]
        print(
            f"{eta:8.3f} {res.sparsity:9.3f} {res.residual:9.3f} "
            f"{str(res.converged):>5} {acc:6.3f} {time.time() - t0:5.0f}s"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
