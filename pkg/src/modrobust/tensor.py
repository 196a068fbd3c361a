"""Minimal reverse-mode autodiff over numpy arrays.

Just enough machinery for small conv/dense classifiers, their losses, and
input-gradient attacks. All arithmetic is float64; reductions accumulate in
float64 even when checkpoints store float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Floor applied before any log so CE/KL never see log(0).
PROB_FLOOR = 1e-12


class NonFiniteError(FloatingPointError):
    """A forward value, loss, or gradient went NaN/Inf."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A numpy array plus the graph edges needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev: tuple[Tensor, ...] = ()
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ----------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-accumulate gradients from this scalar into every input."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        # clear stale intermediate grads so repeated backward passes through
        # one graph (per-class gradients) stay correct; leaves keep accumulating
        for node in topo:
            if node._prev:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self) -> None:
        self.grad = None

    # -- ops ---------------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        out = _node(self.data + other.data, (self, other))

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        out._backward = bw
        return out

    def __mul__(self, other):
        other = _wrap(other)
        out = _node(self.data * other.data, (self, other))

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        out._backward = bw
        return out

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-_wrap(other))

    __radd__ = __add__
    __rmul__ = __mul__

    def matmul(self, other: "Tensor") -> "Tensor":
        out = _node(self.data @ other.data, (self, other))

        def bw(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        out._backward = bw
        return out

    def __matmul__(self, other):
        return self.matmul(other)

    def relu(self) -> "Tensor":
        out = _node(np.maximum(self.data, 0.0), (self,))
        mask = self.data > 0.0

        def bw(g):
            if self.requires_grad:
                self._accumulate(g * mask)

        out._backward = bw
        return out

    def reshape(self, *shape) -> "Tensor":
        out = _node(self.data.reshape(*shape), (self,))

        def bw(g):
            if self.requires_grad:
                self._accumulate(g.reshape(self.data.shape))

        out._backward = bw
        return out

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def bw(g):
            if not self.requires_grad:
                return
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        out._backward = bw
        return out

    def mean(self, axis=None) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def log(self) -> "Tensor":
        """log with the probability floor; gradient is zero below the floor."""
        clipped = np.maximum(self.data, PROB_FLOOR)
        out = _node(np.log(clipped), (self,))
        active = self.data > PROB_FLOOR

        def bw(g):
            if self.requires_grad:
                self._accumulate(np.where(active, g / clipped, 0.0))

        out._backward = bw
        return out

    def concat(self, others: "list[Tensor]", axis: int) -> "Tensor":
        parts = [self] + list(others)
        out = _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
        sizes = [p.data.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def bw(g):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    p._accumulate(g[tuple(idx)])

        out._backward = bw
        return out


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, prev: tuple) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in prev))
    out._prev = tuple(p for p in prev if p.requires_grad) if out.requires_grad else ()
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def softmax_temperature(logits: Tensor, temperature: float) -> Tensor:
    """Rowwise softmax(logits / T). Output rows sum to 1.

    T regulates how soft the distribution is; T -> inf flattens toward
    uniform, T=1 is the plain softmax used at inference time.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = logits.data / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _node(y, (logits,))

    def bw(g):
        if logits.requires_grad:
            dot = (g * y).sum(axis=-1, keepdims=True)
            logits._accumulate(y * (g - dot) / temperature)

    out._backward = bw
    return out


def cross_entropy(probs: Tensor, onehot: np.ndarray) -> Tensor:
    """Mean of -log p[true class] over the batch (or a single row)."""
    onehot = _as_array(onehot)
    if onehot.shape != probs.shape:
        raise ValueError(f"label shape {onehot.shape} != probs shape {probs.shape}")
    picked = (probs * Tensor(onehot)).sum(axis=-1)
    loss = -(picked.log().mean() if picked.data.ndim else picked.log())
    _check_finite(loss.data, "cross_entropy")
    return loss


def kl_divergence(p_ref: Tensor | np.ndarray, q: Tensor) -> Tensor:
    """KL(p_ref || q), mean over rows for batched input. p_ref is the
    reference distribution and carries no gradient."""
    p = p_ref.data if isinstance(p_ref, Tensor) else _as_array(p_ref)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    log_p = np.log(np.maximum(p, PROB_FLOOR))
    per_row = (Tensor(p) * (Tensor(log_p) - q.log())).sum(axis=-1)
    loss = per_row.mean() if per_row.data.ndim else per_row
    _check_finite(loss.data, "kl_divergence")
    return loss


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, pad: tuple) -> Tensor:
    """2-D cross-correlation, stride 1.

    x: (N, C, H, W); weight: (F, C, KH, KW); pad: ((top, bottom), (left, right)).
    """
    n, c, _, _ = x.data.shape
    f, cw, kh, kw = weight.data.shape
    if cw != c:
        raise ValueError(f"conv channel mismatch: input {c}, weight {cw}")
    xp = np.pad(x.data, ((0, 0), (0, 0), pad[0], pad[1]))
    oh = xp.shape[2] - kh + 1
    ow = xp.shape[3] - kw + 1
    if oh <= 0 or ow <= 0:
        raise ValueError("kernel larger than padded input")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    col = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    wmat = weight.data.reshape(f, c * kh * kw)
    y = (col @ wmat.T + bias.data).reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    out = _node(y, (x, weight, bias))

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
        if weight.requires_grad:
            weight._accumulate((gmat.T @ col).reshape(f, c, kh, kw))
        if bias.requires_grad:
            bias._accumulate(gmat.sum(axis=0))
        if x.requires_grad:
            dcol = (gmat @ wmat).reshape(n, oh, ow, c, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + oh, j : j + ow] += dcol[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            pt, pb = pad[0]
            pl, pr = pad[1]
            h_end = dxp.shape[2] - pb
            w_end = dxp.shape[3] - pr
            x._accumulate(dxp[:, :, pt:h_end, pl:w_end])

    out._backward = bw
    return out


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ W + b for x of shape (N, in) and W of shape (in, out)."""
    if x.data.shape[-1] != weight.data.shape[0]:
        raise ValueError(
            f"dense shape mismatch: input {x.data.shape[-1]}, weight {weight.data.shape[0]}"
        )
    return x.matmul(weight) + bias


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in training mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    if rate == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask)


def _check_finite(a: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite value in {where}")


@dataclass
class SgdConfig:
    lr: float = 0.01
    momentum: float = 0.0


@dataclass
class SgdOptimizer:
    """Mini-batch SGD with optional momentum and frozen parameter groups.

    Frozen parameters are skipped entirely, so their bytes never change.
    """

    params: dict  # name -> Tensor
    config: SgdConfig = field(default_factory=SgdConfig)
    frozen: frozenset = frozenset()
    _velocity: dict = field(default_factory=dict)

    def step(self) -> None:
        for name, p in self.params.items():
            if name in self.frozen or p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"NaN/Inf gradient for parameter {name}")
            if self.config.momentum > 0.0:
                v = self._velocity.get(name)
                if v is None:
                    v = np.zeros_like(p.data)
                v = self.config.momentum * v - self.config.lr * p.grad
                self._velocity[name] = v
                p.data = p.data + v
            else:
                p.data = p.data - self.config.lr * p.grad

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
