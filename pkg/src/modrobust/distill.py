"""Teacher-to-student knowledge transfer with temperature-softened losses.

Per batch: L_d = KL(teacher probs at T || student probs at T),
L_c = CE(student probs, labels), total = alpha * L_d + (1 - alpha) * L_c.
Only the student is updated; inference afterwards uses T = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import ModelGraph, Dataset, TrainConfig, train_loop


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 10.0
    alpha: float = 0.1
    epochs: int = 20
    batch: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    # The printed algorithm feeds temperature-softened probabilities into the
    # CE term too; vanilla KD applies temperature only to the KL term. The
    # vanilla reading is the default.
    literal_ce_at_temperature: bool = False
    rescale_kl_by_t_squared: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")


def distill(
    teacher: ModelGraph, student: ModelGraph, dataset: Dataset, cfg: DistillConfig
) -> list[float]:
    """Train the student against teacher soft targets; returns the loss curve.

    The teacher is evaluated (no dropout, no gradient) and never modified.
    """
    if teacher.config.classes != student.config.classes:
        raise ValueError(
            f"teacher has {teacher.config.classes} classes, student {student.config.classes}"
        )
    if teacher.config.frame_len != student.config.frame_len:
        raise ValueError("teacher/student input lengths differ")

    temp = cfg.temperature
    kl_scale = temp * temp if cfg.rescale_kl_by_t_squared else 1.0

    def kd_loss(logits, onehot, xb):
        with teacher.params_detached():
            teacher_probs = T.softmax_temperature(teacher.forward(xb), temp).data
        student_soft = T.softmax_temperature(logits, temp)
        l_d = T.kl_divergence(teacher_probs, student_soft) * kl_scale
        if cfg.literal_ce_at_temperature:
            l_c = T.cross_entropy(student_soft, onehot)
        else:
            l_c = T.cross_entropy(T.softmax_temperature(logits, 1.0), onehot)
        return cfg.alpha * l_d + (1.0 - cfg.alpha) * l_c

    train_cfg = TrainConfig(cfg.epochs, cfg.batch, cfg.lr, cfg.momentum, cfg.seed)
    return train_loop(student, dataset, train_cfg, kd_loss)


def total_loss_components(
    teacher: ModelGraph, student: ModelGraph, xb: np.ndarray, onehot: np.ndarray, cfg: DistillConfig
) -> tuple[float, float]:
    """(L_d, L_c) for one batch at the current parameters; no updates."""
    teacher_probs = T.softmax_temperature(teacher.forward(xb), cfg.temperature).data
    logits = student.forward(xb)
    student_soft = T.softmax_temperature(logits, cfg.temperature)
    l_d = float(T.kl_divergence(teacher_probs, student_soft).data)
    ce_in = student_soft if cfg.literal_ce_at_temperature else T.softmax_temperature(logits, 1.0)
    l_c = float(T.cross_entropy(ce_in, onehot).data)
    return l_d, l_c
