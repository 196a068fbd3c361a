"""Command-line front end.

Subcommands mirror the pipeline stages: dataset, train, distill, prune,
attack, advtrain, eval, pipeline. Exit code 0 only on full success.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import attack as A
from . import harness as H
from . import model as M
from . import prune as P
from . import signal as S
from .advtrain import AdvTrainConfig, adversarial_train
from .distill import DistillConfig, distill


def _split_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--split-seed", type=int, default=0)


def _load_split(args) -> tuple[S.Dataset, S.Dataset, S.Dataset]:
    ds = S.load_dataset(args.data)
    train, test = S.split(ds, S.SplitSpec(args.train_fraction, args.split_seed))
    return ds, train, test


def _train_cfg(args) -> M.TrainConfig:
    return M.TrainConfig(args.epochs, args.batch, args.lr, args.momentum, args.seed)


def cmd_dataset(args) -> int:
    if args.action == "info":
        ds = S.load_dataset(args.path)
        x, y, snr = ds.stacked()
        print(json.dumps({
            "frames": len(ds),
            "frame_len": int(x.shape[2]),
            "classes": ds.class_names,
            "snr_db": sorted(float(s) for s in np.unique(snr)),
            "provenance": ds.provenance,
        }, indent=2))
        return 0
    snrs = tuple(np.arange(args.snr_min, args.snr_max + 1e-9, args.snr_step))
    cfg = S.GeneratorConfig(
        classes=tuple(args.classes.split(",")),
        snr_grid_db=tuple(float(s) for s in snrs),
        frames_per_cell=args.per_cell,
        seed=args.seed,
        frame_len=args.frame_len,
    )
    ds = S.generate_dataset(cfg)
    S.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} frames to {args.out}")
    return 0


def cmd_train(args) -> int:
    _, train, _ = _load_split(args)
    k = len(train.class_names)
    n = train.frames[0].samples.shape[1]
    arch = M.teacher_arch(k, args.scale, n) if args.arch == "teacher" else M.student_arch(k, args.scale, n)
    model = M.build_model(arch, args.seed)
    curve = M.train_standard(model, train, _train_cfg(args))
    h = S.split_hash(S.load_dataset(args.data), S.SplitSpec(args.train_fraction, args.split_seed))
    M.save_checkpoint(model, args.out, {
        "provenance_tag": "standard" if args.arch == "student" else "teacher",
        "split_hash": h, "loss_curve": curve, "seed": args.seed, "epochs": args.epochs,
    })
    print(f"final loss {curve[-1]:.4f}; wrote {args.out}")
    return 0


def cmd_distill(args) -> int:
    teacher, tmeta = M.load_checkpoint(args.teacher)
    _, train, _ = _load_split(args)
    k = len(train.class_names)
    n = train.frames[0].samples.shape[1]
    student = M.build_model(M.student_arch(k, args.scale, n), args.seed)
    cfg = DistillConfig(temperature=args.T, alpha=args.alpha, epochs=args.epochs,
                        batch=args.batch, lr=args.lr, momentum=args.momentum, seed=args.seed)
    curve = distill(teacher, student, train, cfg)
    M.save_checkpoint(student, args.out, {
        "provenance_tag": "distilled", "split_hash": tmeta.get("split_hash"),
        "loss_curve": curve, "temperature": args.T, "alpha": args.alpha, "seed": args.seed,
    })
    print(f"final loss {curve[-1]:.4f}; wrote {args.out}")
    return 0


def cmd_prune(args) -> int:
    model, meta = M.load_checkpoint(args.model)
    _, train, _ = _load_split(args)
    cfg = P.PruneConfig(layer=args.layer, eta=args.eta, probe_size=args.probe, seed=args.seed)
    res = P.prune_layer(model, train, cfg)
    pruned = P.apply_pruning(model, args.layer, res)
    M.save_checkpoint(pruned, args.out, {
        "provenance_tag": "distill_pruned", "split_hash": meta.get("split_hash"),
        "sparsity": res.sparsity,
    })
    report = {"eta": res.eta, "sparsity": res.sparsity, "residual": res.residual,
              "iterations": res.iterations, "converged": res.converged}
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_attack(args) -> int:
    model, _ = M.load_checkpoint(args.model)
    ds = S.load_dataset(args.data)
    frames = [f for f in ds.frames if args.snr_db is None or f.snr_db == args.snr_db]
    x = np.stack([f.samples for f in frames])
    y = np.array([f.label for f in frames])
    powers = np.sum(x**2, axis=(1, 2))
    eps = A.pnr_to_epsilon(args.pnr_db, args.snr_db if args.snr_db is not None else 10.0, powers)
    eps = A.budget_in_kind_norm(args.kind, eps, x.shape[2])
    cfg = A.AttackConfig(kind=args.kind, epsilon=1.0, beta_frac=args.beta_frac,
                         iters=args.iters, seed=args.seed)
    batch = A.run_attack(model, x, y, cfg, eps=eps)
    A.save_adv_batch(batch, args.out, ds.class_names)
    print(f"attack success rate {float(np.mean(batch.success)):.3f}; wrote {args.out}")
    return 0


def cmd_advtrain(args) -> int:
    model, meta = M.load_checkpoint(args.model)
    _, train, _ = _load_split(args)
    mix_pgd, mix_fgsm = (float(v) for v in args.mix.split(","))
    cfg = AdvTrainConfig(
        pnr_db=args.pnr_db, pgd_iters=args.pgd_iters, mix_pgd=mix_pgd, mix_fgsm=mix_fgsm,
        freeze=tuple(args.freeze.split(",")) if args.freeze else (),
        epochs=args.epochs, batch=args.batch, lr=args.lr, momentum=args.momentum, seed=args.seed,
    )
    curve = adversarial_train(model, train, cfg)
    tag = meta.get("provenance_tag", "model") + "_adv"
    M.save_checkpoint(model, args.out, {
        "provenance_tag": tag, "split_hash": meta.get("split_hash"),
        "loss_curve": curve, "at_pnr_db": args.pnr_db,
    })
    print(f"final loss {curve[-1]:.4f}; wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    models = {}
    for spec in args.models.split(","):
        tag, path = spec.split("=", 1)
        models[tag] = M.load_checkpoint(path)
    _, _, test = _load_split(args)
    attacks = [A.AttackConfig(kind=k, epsilon=1.0, iters=args.pgd_iters if k == "pgd" else 50)
               for k in args.attacks.split(",")]
    pnrs = [float(p) for p in args.pnr_db.split(",")]
    report = H.compare_report(models, attacks, pnrs, test, snr_db=args.snr_db,
                              max_frames=args.max_frames, seed=args.seed)
    H.export(report, "json", args.out)
    if args.csv:
        H.export(report, "csv", args.csv)
    print(f"wrote {args.out}")
    return 0


def cmd_pipeline(args) -> int:
    with open(args.config) as fh:
        config = json.load(fh)
    if args.seed is not None:
        config["seed"] = args.seed
    H.run_pipeline(config, args.out_dir)
    print(f"pipeline complete; artifacts in {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="modrobust")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate or inspect datasets")
    dsub = p.add_subparsers(dest="action", required=True)
    g = dsub.add_parser("gen")
    g.add_argument("--classes", default="BPSK,QPSK,PAM4,GFSK")
    g.add_argument("--snr-min", type=float, default=10.0)
    g.add_argument("--snr-max", type=float, default=10.0)
    g.add_argument("--snr-step", type=float, default=2.0)
    g.add_argument("--per-cell", type=int, default=250)
    g.add_argument("--frame-len", type=int, default=128)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_dataset)
    i = dsub.add_parser("info")
    i.add_argument("path")
    i.set_defaults(fn=cmd_dataset)

    def common_train(p):
        p.add_argument("--data", required=True)
        p.add_argument("--epochs", type=int, default=20)
        p.add_argument("--batch", type=int, default=64)
        p.add_argument("--lr", type=float, default=0.01)
        p.add_argument("--momentum", type=float, default=0.9)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        _split_args(p)

    p = sub.add_parser("train", help="train a model with plain cross-entropy")
    p.add_argument("--arch", choices=["student", "teacher"], default="student")
    p.add_argument("--scale", choices=["desk", "paper"], default="desk")
    common_train(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("distill", help="teacher-to-student knowledge transfer")
    p.add_argument("--teacher", required=True)
    p.add_argument("--scale", choices=["desk", "paper"], default="desk")
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--alpha", type=float, default=0.1)
    common_train(p)
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("prune", help="sparsify one dense layer")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--layer", default="fc1")
    p.add_argument("--eta", type=float, default=0.8)
    p.add_argument("--probe", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _split_args(p)
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("attack", help="generate an adversarial batch")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=["fgm", "fgsm", "pgd", "deepfool", "uap"], default="pgd")
    p.add_argument("--pnr-db", type=float, default=-10.0)
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--beta-frac", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("advtrain", help="PGD+FGSM adversarial training")
    p.add_argument("--model", required=True)
    p.add_argument("--pgd-iters", type=int, default=10)
    p.add_argument("--pnr-db", type=float, default=-10.0)
    p.add_argument("--mix", default="0.25,0.25")
    p.add_argument("--freeze", default="fc1")
    common_train(p)
    p.set_defaults(fn=cmd_advtrain)

    p = sub.add_parser("eval", help="accuracy-vs-PNR report for tagged checkpoints")
    p.add_argument("--models", required=True, help="tag=ckpt[,tag=ckpt...]")
    p.add_argument("--data", required=True)
    p.add_argument("--attacks", default="pgd")
    p.add_argument("--pnr-db", default=",".join(str(p) for p in H.DEFAULT_PNR_SWEEP))
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--pgd-iters", type=int, default=10)
    p.add_argument("--max-frames", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    _split_args(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("pipeline", help="run configured stages end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
