"""Adversarial training with a mixed PGD + FGSM batch recipe.

Each training batch keeps a clean fraction and replaces the remaining rows
with adversarial versions generated against the current parameters (equal
parts PGD and FGSM by default). The first FC layer is frozen throughout,
which also preserves any pruned zero pattern living there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attack import attack_fgm, attack_fgsm, attack_pgd, budget_in_kind_norm, pnr_to_epsilon
from .model import Dataset, ModelGraph, TrainConfig, train_loop


@dataclass(frozen=True)
class AdvTrainConfig:
    # budget: one fixed eps per attack kind, derived from a target PNR at a
    # reference SNR against the nominal unit-power frame
    pnr_db: float = -10.0
    ref_snr_db: float = 10.0
    pgd_iters: int = 10
    pgd_beta_frac: float = 0.25
    mix_pgd: float = 0.25
    mix_fgsm: float = 0.25
    clean_retained: bool = True  # False: adversarial rows fill the whole batch
    freeze: tuple[str, ...] = ("fc1",)
    epochs: int = 20
    batch: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    on_the_fly: bool = True  # False: generate once against the initial model
    # swap in other kinds for ablations ("pgd", "fgsm", "fgm")
    attacks: tuple[str, ...] = ("pgd", "fgsm")

    def __post_init__(self):
        if self.mix_pgd + self.mix_fgsm > 1.0 + 1e-12:
            raise ValueError("adversarial mix exceeds the batch")
        for a in self.attacks:
            if a not in ("pgd", "fgsm", "fgm"):
                raise ValueError(f"unsupported AT attack {a!r}")


def _epsilon(cfg: AdvTrainConfig, frame_len: int, kind: str = "fgm") -> float:
    """Attack budget in the kind's own norm from the configured PNR target,
    against the nominal unit-power frame (L2 power budget, rescaled for
    Linf-normed kinds)."""
    eps_l2 = pnr_to_epsilon(cfg.pnr_db, cfg.ref_snr_db, float(frame_len))
    return float(budget_in_kind_norm(kind, eps_l2, frame_len))


def adversarial_train(model: ModelGraph, dataset: Dataset, cfg: AdvTrainConfig) -> list[float]:
    """Harden a trained model in place; returns the loss curve.

    Frozen parameter groups are bit-identical before and after. With a zero
    mix and clean retention this reduces exactly to standard CE training.
    """
    n = model.config.frame_len
    eps_of = {k: _epsilon(cfg, n, k) for k in ("pgd", "fgsm", "fgm")}
    fracs = {"pgd": cfg.mix_pgd, "fgsm": cfg.mix_fgsm}
    kinds = list(cfg.attacks)
    if set(kinds) != {"pgd", "fgsm"}:
        # ablation mode: split the adversarial budget evenly over the kinds
        total = cfg.mix_pgd + cfg.mix_fgsm
        fracs = {k: total / len(kinds) for k in kinds}

    def generate(m: ModelGraph, xb: np.ndarray, yb: np.ndarray) -> np.ndarray:
        out = xb.copy() if cfg.clean_retained else np.empty_like(xb)
        b = len(xb)
        counts = {k: int(np.floor(b * fracs[k])) for k in kinds}
        if not cfg.clean_retained:
            # replace mode: every row is adversarial, rounding goes to kinds[0]
            counts[kinds[0]] += b - sum(counts.values())
        start = b - sum(counts.values())
        if not cfg.clean_retained:
            start = 0
        pos = start
        for k in kinds:
            c = counts[k]
            if c == 0:
                continue
            sl = slice(pos, pos + c)
            e = eps_of[k]
            if k == "pgd":
                adv = attack_pgd(m, xb[sl], yb[sl], e, e * cfg.pgd_beta_frac, cfg.pgd_iters)
            elif k == "fgsm":
                adv = attack_fgsm(m, xb[sl], yb[sl], e)
            else:
                adv = attack_fgm(m, xb[sl], yb[sl], e)
            out[sl] = adv.perturbed
            pos += c
        return out

    if cfg.on_the_fly:
        def transform(xb, yb, _idx):
            if all(fracs[k] == 0.0 for k in kinds):
                return xb
            return generate(model, xb, yb)
    else:
        x_all, y_all, _ = dataset.stacked()
        cache = x_all.copy()
        bsz = 256
        snapshot = model.copy()
        for i in range(0, len(x_all), bsz):
            cache[i : i + bsz] = generate(snapshot, x_all[i : i + bsz], y_all[i : i + bsz])

        def transform(xb, yb, idx):
            return cache[idx]

    def ce_loss(logits, onehot, _xb):
        return T.cross_entropy(T.softmax_temperature(logits, 1.0), onehot)

    train_cfg = TrainConfig(cfg.epochs, cfg.batch, cfg.lr, cfg.momentum, cfg.seed)
    return train_loop(model, dataset, train_cfg, ce_loss, frozen=frozenset(cfg.freeze),
                      transform=transform)
