"""Layer pruning by constrained L1 minimization, solved with ADMM.

For a dense+ReLU layer with probe activations Y_prev (inputs) and Y_k
(post-ReLU outputs), find sparse weights V minimizing ||V||_1 subject to
||max(V^T Y_prev, 0) - Y_k||_F <= eta.

The ReLU constraint is convexified by the sign pattern of Y_k: on the
support (Y_k > 0) the pre-activation must match Y_k in Frobenius norm; off
the support only its positive part is penalized. Bias terms ride along as
an extra all-ones probe row, excluded from the L1 objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelGraph
from .seeds import derive_rng
from .signal import Dataset

ZERO_THRESHOLD = 1e-8


class InfeasibleEtaError(ValueError):
    """eta is below the best residual any weight matrix can achieve."""


@dataclass(frozen=True)
class PruneConfig:
    layer: str = "fc1"
    eta: float = 0.8
    probe_size: int = 512
    rho: float = 1.0
    max_iters: int = 500
    tol_primal: float = 1e-4
    tol_dual: float = 1e-4
    seed: int = 0
    normalize_probe: bool = True


@dataclass
class SparseLayerResult:
    weights: np.ndarray  # (fan_in, out), exactly sparse
    bias: np.ndarray
    sparsity: float
    residual: float
    objective: float  # ||weights||_1
    iterations: int
    converged: bool
    eta: float


def sparsity(w: np.ndarray) -> float:
    """Fraction of entries at (numerical) zero."""
    w = np.asarray(w)
    return float(np.mean(np.abs(w) <= ZERO_THRESHOLD))


def relu_residual(v: np.ndarray, y_prev: np.ndarray, y_k: np.ndarray) -> float:
    """||max(v^T y_prev, 0) - y_k||_F."""
    return float(np.linalg.norm(np.maximum(v.T @ y_prev, 0.0) - y_k))


def collect_layer_activations(
    model: ModelGraph, probe: Dataset, layer: str
) -> tuple[np.ndarray, np.ndarray]:
    """(Y_prev (d, |U|), Y_k (m, |U|)) through the real forward pass.

    Y_prev includes the convolutional front-end, flattened; Y_k is the
    post-ReLU output of the named dense layer. Columns are probe samples.
    """
    spec = next((ls for ls in model.config.layers if ls.name == layer), None)
    if spec is None or spec.kind != "dense":
        raise ValueError(f"layer {layer!r} is not a dense layer of this model")
    if spec.activation != "relu":
        raise ValueError(f"layer {layer!r} is not followed by a ReLU")
    x, _, _ = probe.stacked()
    capture: dict = {}
    model.forward(x, capture=capture)
    pre, post = capture[layer]
    return pre.T.copy(), post.T.copy()


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _project_fidelity(z0: np.ndarray, y_k: np.ndarray, support: np.ndarray, eta: float):
    """Euclidean projection of Z0 onto {Z : ||(Z - Y_k)_S||^2 + ||pos(Z)_Sc||^2 <= eta^2}.

    The active-constraint solution shrinks every violating coordinate by one
    common factor, so the projection is closed-form.
    """
    viol = np.where(support, z0 - y_k, np.maximum(z0, 0.0))
    s = float(np.sum(viol**2))
    if s <= eta**2:
        return z0.copy()
    c = eta / np.sqrt(s)
    z = np.where(support, y_k + c * (z0 - y_k), np.where(z0 > 0, c * z0, z0))
    return z


def _descend_residual(
    v0: np.ndarray, y_prev: np.ndarray, y_k: np.ndarray, eta: float, iters: int = 200
) -> np.ndarray:
    """Gradient descent on the squared convexified residual, used only to
    certify feasibility. Stops early once the residual drops below eta."""
    support = y_k > 0.0
    # Lipschitz constant of the gradient is 2 * lambda_max(Y Y^T)
    lam = np.linalg.norm(y_prev, 2) ** 2
    if lam == 0.0:
        return v0
    step = 1.0 / lam
    v = v0.copy()
    for _ in range(iters):
        pre = v.T @ y_prev
        r = np.where(support, pre - y_k, np.maximum(pre, 0.0))
        if np.linalg.norm(r) <= eta:
            break
        v = v - step * (y_prev @ r.T)
    return v


def trim(
    y_prev: np.ndarray,
    y_k: np.ndarray,
    eta: float,
    cfg: PruneConfig,
    w_init: np.ndarray | None = None,
    l1_mask: np.ndarray | None = None,
) -> SparseLayerResult:
    """ADMM solve of the constrained L1 program. y_prev: (d, u), y_k: (m, u).

    w_init warm-starts the solve (the unpruned weights in pipeline use).
    l1_mask marks entries of V that carry the L1 penalty; unmasked entries
    (bias rows) are neither shrunk nor zeroed.
    """
    if eta <= 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    d, u = y_prev.shape
    m, u2 = y_k.shape
    if u != u2:
        raise ValueError(f"probe column mismatch: {u} vs {u2}")
    support = y_k > 0.0
    if l1_mask is None:
        l1_mask = np.ones((d, m), dtype=bool)

    v = np.zeros((d, m)) if w_init is None else np.asarray(w_init, dtype=np.float64).copy()
    if v.shape != (d, m):
        raise ValueError(f"w_init shape {v.shape} != ({d}, {m})")

    # feasibility probe: minimize the convexified residual directly (gradient
    # descent from the better of warm start and least squares); if even that
    # cannot reach eta, no V satisfies the constraint numerically
    v_ls, *_ = np.linalg.lstsq(y_prev.T, y_k.T, rcond=None)
    v_feas = min((v, v_ls), key=lambda a: relu_residual(a, y_prev, y_k))
    v_feas = _descend_residual(v_feas, y_prev, y_k, eta)
    if relu_residual(v_feas, y_prev, y_k) > eta * (1 + 1e-9):
        raise InfeasibleEtaError(
            f"eta={eta} below the best achievable residual on this probe set"
        )

    rho = cfg.rho
    gram = y_prev @ y_prev.T
    chol = np.linalg.cholesky(gram + np.eye(d))

    w = v.copy()
    z = _project_fidelity(v.T @ y_prev, y_k, support, eta)
    u_w = np.zeros_like(v)
    u_z = np.zeros_like(z)

    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        rhs = (w - u_w) + y_prev @ (z - u_z).T
        v = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        av = v.T @ y_prev

        w_old, z_old = w, z
        w = np.where(l1_mask, soft_threshold(v + u_w, 1.0 / rho), v + u_w)
        z = _project_fidelity(av + u_z, y_k, support, eta)

        u_w = u_w + v - w
        u_z = u_z + av - z

        r_pri = np.sqrt(np.linalg.norm(v - w) ** 2 + np.linalg.norm(av - z) ** 2)
        s_dual = rho * np.sqrt(
            np.linalg.norm(w - w_old) ** 2 + np.linalg.norm(y_prev @ (z - z_old).T) ** 2
        )
        # residual balancing keeps the penalty useful across problem scales
        if r_pri > 10.0 * s_dual:
            rho *= 2.0
            u_w /= 2.0
            u_z /= 2.0
        elif s_dual > 10.0 * r_pri:
            rho /= 2.0
            u_w *= 2.0
            u_z *= 2.0
        scale = max(
            np.sqrt(np.linalg.norm(v) ** 2 + np.linalg.norm(av) ** 2),
            np.sqrt(np.linalg.norm(w) ** 2 + np.linalg.norm(z) ** 2),
            1.0,
        )
        n_el = np.sqrt(v.size + z.size)
        if r_pri <= cfg.tol_primal * n_el * scale and s_dual <= cfg.tol_dual * n_el * rho * scale:
            # only accept if the sparse copy actually meets the fidelity budget
            w_hard = np.where(l1_mask & (np.abs(w) <= ZERO_THRESHOLD), 0.0, w)
            if relu_residual(w_hard, y_prev, y_k) <= eta * 1.05:
                converged = True
                break

    out = np.where(l1_mask & (np.abs(w) <= ZERO_THRESHOLD), 0.0, w)
    residual = relu_residual(out, y_prev, y_k)
    if converged and residual > eta * 1.05:
        converged = False
    return SparseLayerResult(
        weights=out,
        bias=np.zeros(m),
        sparsity=sparsity(out[l1_mask]),
        residual=residual,
        objective=float(np.sum(np.abs(out[l1_mask]))),
        iterations=it,
        converged=converged,
        eta=eta,
    )


def prune_layer(model: ModelGraph, train: Dataset, cfg: PruneConfig) -> SparseLayerResult:
    """Run the full pruning pass for one dense layer of a trained model.

    Draws a class-stratified probe subset from the training split, collects
    real activations, folds the bias into an all-ones probe row (excluded
    from the objective), and solves. Returns the sparse result; apply it
    with apply_pruning.
    """
    probe = _stratified_probe(train, cfg.probe_size, cfg.seed)
    y_prev, y_k = collect_layer_activations(model, probe, cfg.layer)
    d, u = y_prev.shape
    w0 = model.params[f"{cfg.layer}.W"].data
    b0 = model.params[f"{cfg.layer}.b"].data
    # the bias rides along as a probe row; it must share the column scaling,
    # otherwise the original weights stop being a feasible (zero-residual) start
    aug_prev = np.vstack([y_prev, np.ones((1, u))])
    aug_init = np.vstack([w0, b0[None, :]])
    if cfg.normalize_probe:
        norms = np.linalg.norm(y_prev, axis=0)
        norms = np.where(norms > 0, norms, 1.0)
        aug_prev = aug_prev / norms
        y_k = y_k / norms
    mask = np.ones_like(aug_init, dtype=bool)
    mask[-1, :] = False
    res = trim(aug_prev, y_k, cfg.eta, cfg, w_init=aug_init, l1_mask=mask)
    res.bias = res.weights[-1, :].copy()
    res.weights = res.weights[:-1, :].copy()
    res.sparsity = sparsity(res.weights)
    return res


def apply_pruning(model: ModelGraph, layer: str, result: SparseLayerResult) -> ModelGraph:
    """New model with the layer's weights (and bias) replaced."""
    key = f"{layer}.W"
    if key not in model.params:
        raise ValueError(f"model has no layer {layer!r}")
    if model.params[key].data.shape != result.weights.shape:
        raise ValueError(
            f"weight shape {result.weights.shape} != layer shape {model.params[key].data.shape}"
        )
    pruned = model.copy()
    pruned.params[key].data = result.weights.copy()
    pruned.params[f"{layer}.b"].data = result.bias.copy()
    return pruned


def _stratified_probe(dataset: Dataset, size: int, seed: int) -> Dataset:
    if size < 1:
        raise ValueError("probe size must be >= 1")
    size = min(size, len(dataset))
    by_class: dict[int, list[int]] = {}
    for i, f in enumerate(dataset.frames):
        by_class.setdefault(f.label, []).append(i)
    rng = derive_rng(seed, "probe")
    picked: list[int] = []
    labels = sorted(by_class)
    per = size // len(labels)
    for lb in labels:
        idx = by_class[lb]
        take = min(per, len(idx))
        picked.extend(rng.choice(idx, size=take, replace=False))
    # top up round-robin if the division left a remainder
    i = 0
    pool = [j for lb in labels for j in by_class[lb] if j not in set(picked)]
    rng.shuffle(pool)
    while len(picked) < size and i < len(pool):
        picked.append(pool[i])
        i += 1
    return Dataset([dataset.frames[i] for i in sorted(picked)], dataset.class_names,
                   provenance=dataset.provenance + "|probe")
