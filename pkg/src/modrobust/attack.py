"""White-box adversarial example generation and perturbation budgets.

Five attacks against a trained classifier: FGM (L2 step), FGSM (Linf step),
PGD (iterated FGSM with clipping to the eps-ball), DeepFool (iterative
closest-hyperplane projection), and a PCA-fitted universal perturbation.
All are untargeted: an attack succeeds when the predicted label moves off
the clean label. Budgets are expressed either as a raw eps or via the
perturbation-to-noise ratio PNR = eps^2 * (SNR_lin + 1) / ||x||^2 and
PSR = PNR / SNR.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import ModelGraph, predict_batch


@dataclass(frozen=True)
class AttackConfig:
    kind: str  # fgm | fgsm | pgd | deepfool | uap
    epsilon: float = 0.0
    beta_frac: float = 0.25  # PGD step as a fraction of epsilon
    iters: int = 10
    overshoot: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("fgm", "fgsm", "pgd", "deepfool", "uap"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.kind != "deepfool" and self.epsilon <= 0:
            raise ValueError("epsilon must be > 0 for budgeted attacks")
        if self.kind in ("pgd", "deepfool") and self.iters < 1:
            raise ValueError("iterative attacks need iters >= 1")


@dataclass
class AdversarialBatch:
    originals: np.ndarray  # (N, 2, n)
    perturbed: np.ndarray
    delta: np.ndarray
    labels: np.ndarray
    success: np.ndarray  # bool, label moved off the clean label
    provenance: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Budget algebra


def db_to_lin(db: float) -> float:
    return 10.0 ** (np.asarray(db, dtype=np.float64) / 10.0)


def lin_to_db(lin: float) -> float:
    return 10.0 * np.log10(np.asarray(lin, dtype=np.float64))


def pnr_to_epsilon(pnr_db, snr_db, sig_power):
    """eps = sqrt(PNR_lin * ||x||^2 / (SNR_lin + 1)); accepts arrays."""
    sig_power = np.asarray(sig_power, dtype=np.float64)
    if np.any(sig_power <= 0):
        raise ValueError("signal power must be > 0")
    return np.sqrt(db_to_lin(pnr_db) * sig_power / (db_to_lin(snr_db) + 1.0))


def pnr_of(eps, snr_db, sig_power):
    sig_power = np.asarray(sig_power, dtype=np.float64)
    if np.any(sig_power <= 0):
        raise ValueError("signal power must be > 0")
    return lin_to_db(np.asarray(eps) ** 2 * (db_to_lin(snr_db) + 1.0) / sig_power)


def psr_of(eps, snr_db, sig_power):
    """PSR in dB; PSR = PNR / SNR so PSR_db = PNR_db - SNR_db."""
    return pnr_of(eps, snr_db, sig_power) - np.asarray(snr_db, dtype=np.float64)


def budget_in_kind_norm(kind: str, eps_l2, frame_len: int):
    """Convert an L2 (power) budget to the attack kind's own norm.

    PNR budgets are perturbation-power budgets, i.e. L2. A full Linf step of
    size e has L2 norm e*sqrt(2n), so Linf attacks (fgsm, pgd) get the budget
    scaled down by sqrt(2n) to keep the realized power within the budget.
    """
    if kind in ("fgsm", "pgd"):
        return np.asarray(eps_l2, dtype=np.float64) / np.sqrt(2.0 * frame_len)
    return np.asarray(eps_l2, dtype=np.float64)


# ---------------------------------------------------------------------------
# Gradients


def loss_input_gradients(
    model: ModelGraph, x: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame gradient of that frame's CE loss w.r.t. its input.

    Returns (grads (N,2,n), per-frame losses (N,)).
    """
    xt = T.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
    onehot = np.zeros((len(labels), model.config.classes))
    onehot[np.arange(len(labels)), labels] = 1.0
    with model.params_detached():
        probs = T.softmax_temperature(model.forward(xt), 1.0)
        picked = (probs * T.Tensor(onehot)).sum(axis=-1)
        loss_vec = -(picked.log())
        loss_vec.sum().backward()
    grads = xt.grad
    if not np.all(np.isfinite(grads)):
        raise T.NonFiniteError("non-finite input gradient")
    return grads, loss_vec.data


def _finish(model, x, labels, delta, provenance) -> AdversarialBatch:
    x = np.asarray(x, dtype=np.float64)
    perturbed = x + delta
    pred = predict_batch(model, perturbed)
    return AdversarialBatch(
        originals=x.copy(),
        perturbed=perturbed,
        delta=delta,
        labels=np.asarray(labels).copy(),
        success=pred != np.asarray(labels),
        provenance=provenance,
    )


def _per_frame(eps, n: int) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    return np.broadcast_to(eps, (n,)).reshape(n, 1, 1)


# ---------------------------------------------------------------------------
# Attacks


def attack_fgm(model: ModelGraph, x: np.ndarray, labels: np.ndarray, eps) -> AdversarialBatch:
    """Single L2-normalized gradient step: delta = eps * g / ||g||_2."""
    grads, _ = loss_input_gradients(model, x, labels)
    norms = np.linalg.norm(grads.reshape(len(grads), -1), axis=1).reshape(-1, 1, 1)
    safe = np.where(norms > 0, norms, 1.0)
    delta = _per_frame(eps, len(grads)) * grads / safe * (norms > 0)
    return _finish(model, x, labels, delta, {"kind": "fgm", "eps": np.asarray(eps).tolist()})


def attack_fgsm(model: ModelGraph, x: np.ndarray, labels: np.ndarray, eps) -> AdversarialBatch:
    """Single Linf step: delta = eps * sign(g), with sign(0) = 0."""
    grads, _ = loss_input_gradients(model, x, labels)
    delta = _per_frame(eps, len(grads)) * np.sign(grads)
    return _finish(model, x, labels, delta, {"kind": "fgsm", "eps": np.asarray(eps).tolist()})


def attack_pgd(
    model: ModelGraph, x: np.ndarray, labels: np.ndarray, eps, beta, iters: int
) -> AdversarialBatch:
    """Iterated sign steps, each clipped to the eps-ball around the clean x."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    e = _per_frame(eps, len(x))
    b = _per_frame(beta, len(x))
    d = np.zeros_like(x)
    for _ in range(iters):
        grads, _ = loss_input_gradients(model, x + d, labels)
        d = np.clip(d + b * np.sign(grads), -e, e)
    return _finish(
        model, x, labels, d,
        {"kind": "pgd", "eps": np.asarray(eps).tolist(), "beta": np.asarray(beta).tolist(),
         "iters": iters},
    )


def _class_gradients(model: ModelGraph, frame: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and per-class input gradients for one frame: one forward,
    K backward sweeps."""
    k = model.config.classes
    grads = np.empty((k,) + frame.shape)
    xt = T.Tensor(frame[None], requires_grad=True)
    with model.params_detached():
        logits = model.forward(xt)
        for j in range(k):
            sel = np.zeros((1, k))
            sel[0, j] = 1.0
            xt.zero_grad()
            (logits * T.Tensor(sel)).sum().backward()
            grads[j] = xt.grad[0]
    return logits.data[0], grads


def attack_deepfool(
    model: ModelGraph,
    x: np.ndarray,
    labels: np.ndarray,
    max_iters: int = 50,
    overshoot: float = 0.02,
) -> AdversarialBatch:
    """Multiclass linearization: step to the closest class boundary until the
    label flips or max_iters runs out. Already-misclassified frames get
    delta = 0 immediately.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    delta = np.zeros_like(x)
    for i in range(len(x)):
        lbl = int(labels[i])
        if int(np.argmax(model.forward(x[i][None]).data[0])) != lbl:
            continue
        r_tot = np.zeros_like(x[i])
        for _ in range(max_iters):
            xi = x[i] + (1.0 + overshoot) * r_tot
            logits, grads = _class_gradients(model, xi)
            if int(np.argmax(logits)) != lbl:
                break
            f_diff = logits - logits[lbl]
            w_diff = grads - grads[lbl]
            w_norms = np.linalg.norm(w_diff.reshape(len(logits), -1), axis=1)
            ratio = np.full(len(logits), np.inf)
            ok = (np.arange(len(logits)) != lbl) & (w_norms > 1e-12)
            ratio[ok] = np.abs(f_diff[ok]) / w_norms[ok]
            k_star = int(np.argmin(ratio))
            if not np.isfinite(ratio[k_star]):
                break
            # tiny multiplicative nudge pushes strictly past the boundary
            step = np.abs(f_diff[k_star]) * (1.0 + 1e-7) / w_norms[k_star] ** 2
            r_tot = r_tot + step * w_diff[k_star]
        delta[i] = (1.0 + overshoot) * r_tot
    return _finish(model, x, labels, delta,
                   {"kind": "deepfool", "max_iters": max_iters, "overshoot": overshoot})


def fit_uap_pca(model: ModelGraph, x: np.ndarray, labels: np.ndarray, eps: float) -> np.ndarray:
    """Universal perturbation: first principal direction of the normalized
    per-frame loss gradients, scaled to ||delta||_2 = eps, signed to
    maximize the mean loss increase over the probe.
    """
    if len(x) < 2:
        raise ValueError("UAP fitting needs a probe of at least 2 frames")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    grads, _ = loss_input_gradients(model, x, labels)
    g = grads.reshape(len(grads), -1)
    norms = np.linalg.norm(g, axis=1)
    keep = norms > 0
    if not np.any(keep):
        raise ValueError("all probe gradients are zero; cannot fit a direction")
    g = g[keep] / norms[keep, None]
    _, _, vt = np.linalg.svd(g, full_matrices=False)
    direction = vt[0].reshape(x.shape[1:])
    delta = eps * direction / np.linalg.norm(direction)

    def mean_loss(d):
        _, losses = loss_input_gradients(model, x + d, labels)
        return float(np.mean(losses))

    return delta if mean_loss(delta) >= mean_loss(-delta) else -delta


def apply_uap(model: ModelGraph, x: np.ndarray, labels: np.ndarray, delta: np.ndarray) -> AdversarialBatch:
    """Add the same delta to every frame; success flags are recomputed."""
    x = np.asarray(x, dtype=np.float64)
    if delta.shape != x.shape[1:]:
        raise ValueError(f"delta shape {delta.shape} != frame shape {x.shape[1:]}")
    full = np.broadcast_to(delta, x.shape).copy()
    return _finish(model, x, labels, full, {"kind": "uap", "eps": float(np.linalg.norm(delta))})


def run_attack(
    model: ModelGraph, x: np.ndarray, labels: np.ndarray, cfg: AttackConfig, eps=None
) -> AdversarialBatch:
    """Dispatch on cfg.kind; eps (scalar or per-frame) overrides cfg.epsilon."""
    e = cfg.epsilon if eps is None else eps
    if cfg.kind == "fgm":
        return attack_fgm(model, x, labels, e)
    if cfg.kind == "fgsm":
        return attack_fgsm(model, x, labels, e)
    if cfg.kind == "pgd":
        return attack_pgd(model, x, labels, e, np.asarray(e) * cfg.beta_frac, cfg.iters)
    if cfg.kind == "deepfool":
        return attack_deepfool(model, x, labels, cfg.iters, cfg.overshoot)
    probe = np.asarray(e, dtype=np.float64)
    scalar_eps = float(np.mean(probe))  # one delta for all frames: mean budget
    delta = fit_uap_pca(model, x, labels, scalar_eps)
    return apply_uap(model, x, labels, delta)


# ---------------------------------------------------------------------------
# Adversarial batch persistence: dataset records for the perturbed frames,
# then a "DLTA" section with float32 deltas and success flags.


def save_adv_batch(batch: AdversarialBatch, path: str, class_names: list[str]) -> None:
    from .signal import Dataset, IQFrame, save_dataset

    frames = [
        IQFrame(batch.perturbed[i].astype(np.float32).astype(np.float64), 0.0, int(batch.labels[i]))
        for i in range(len(batch.perturbed))
    ]
    save_dataset(Dataset(frames, class_names, provenance="adv"), path)
    with open(path, "ab") as fh:
        fh.write(b"DLTA")
        fh.write(struct.pack("<Q", batch.delta.size))
        fh.write(batch.delta.astype("<f4").tobytes())
        fh.write(batch.success.astype(np.uint8).tobytes())


def load_adv_batch(path: str) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(perturbed, delta, labels, success) from a saved adversarial batch."""
    from .signal import load_dataset

    ds = load_dataset(path)
    perturbed, labels, _ = ds.stacked()
    with open(path, "rb") as fh:
        raw = fh.read()
    pos = raw.rfind(b"DLTA")
    if pos < 0:
        raise ValueError("file has no delta section")
    (size,) = struct.unpack_from("<Q", raw, pos + 4)
    delta = np.frombuffer(raw, dtype="<f4", count=size, offset=pos + 12)
    delta = delta.astype(np.float64).reshape(perturbed.shape)
    flags = np.frombuffer(raw, dtype=np.uint8, count=len(perturbed), offset=pos + 12 + 4 * size)
    return perturbed, delta, labels, flags.astype(bool)
