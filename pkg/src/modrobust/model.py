"""Classifier architectures, training, evaluation, and checkpoints.

Two families: a conv/dense "student" (the deployable classifier, with the
big first FC layer named "fc1") and a parallel-branch "teacher". Presets
exist at paper scale (parameter-count verification only) and desk scale
(everything that actually trains in tests).
"""

from __future__ import annotations

import hashlib
import json
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .seeds import derive_rng
from .signal import Dataset

CHECKPOINT_MAGIC = b"AMCM"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Corrupt or incompatible checkpoint file."""


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | dense | flatten | dropout | inception
    name: str
    filters: int = 0
    kernel: tuple[int, int] = (1, 1)
    pad: tuple[tuple[int, int], tuple[int, int]] = ((0, 0), (0, 0))
    width: int = 0
    rate: float = 0.0
    activation: str = "relu"  # relu | none
    branches: tuple = ()  # inception: tuple of (filters, kh, kw, pad)


@dataclass(frozen=True)
class ArchConfig:
    layers: tuple[LayerSpec, ...]
    frame_len: int
    classes: int
    preset: str = "custom"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(blob: str) -> "ArchConfig":
        d = json.loads(blob)

        def fix(ls):
            ls["kernel"] = tuple(ls["kernel"])
            ls["pad"] = tuple(tuple(p) for p in ls["pad"])
            ls["branches"] = tuple(
                (b[0], b[1], b[2], tuple(tuple(p) for p in b[3])) for b in ls["branches"]
            )
            return LayerSpec(**ls)

        return ArchConfig(
            layers=tuple(fix(ls) for ls in d["layers"]),
            frame_len=d["frame_len"],
            classes=d["classes"],
            preset=d["preset"],
        )


def _conv(name, filters, kh, kw, pad=((0, 0), (0, 0))):
    return LayerSpec("conv", name, filters=filters, kernel=(kh, kw), pad=pad)


def _same_w(kw: int) -> tuple:
    left = (kw - 1) // 2
    return ((0, 0), (left, kw - 1 - left))


def student_arch(classes: int, scale: str = "desk", frame_len: int = 128) -> ArchConfig:
    """Conv-conv-dense-dense classifier; fc1 holds most of the parameters."""
    if scale == "paper":
        layers = (
            _conv("conv1", 256, 1, 3, ((0, 0), (2, 2))),
            LayerSpec("dropout", "drop1", rate=0.5),
            _conv("conv2", 80, 2, 3, ((0, 0), (2, 2))),
            LayerSpec("dropout", "drop2", rate=0.5),
            LayerSpec("flatten", "flatten"),
            LayerSpec("dense", "fc1", width=256),
            LayerSpec("dropout", "drop3", rate=0.5),
            LayerSpec("dense", "fc2", width=classes, activation="none"),
        )
    elif scale == "desk":
        layers = (
            _conv("conv1", 16, 1, 3, _same_w(3)),
            _conv("conv2", 8, 2, 3),
            LayerSpec("flatten", "flatten"),
            LayerSpec("dense", "fc1", width=64),
            LayerSpec("dense", "fc2", width=classes, activation="none"),
        )
    else:
        raise ValueError(f"unknown scale {scale!r}")
    return ArchConfig(layers, frame_len, classes, preset=f"student-{scale}")


def teacher_arch(classes: int, scale: str = "desk", frame_len: int = 128) -> ArchConfig:
    """Two parallel-branch blocks (1x1, 1x3, 2x3 kernels) with channel
    concatenation, then a dense head."""
    nf = {"desk": 8, "paper": 64}[scale]
    width = {"desk": 64, "paper": 204}[scale]
    branches = lambda: (  # noqa: E731 - same geometry for both blocks
        (nf, 1, 1, ((0, 0), (0, 0))),
        (nf, 1, 3, _same_w(3)),
        (nf, 2, 3, (((0, 1)), (1, 1))),
    )
    layers = (
        LayerSpec("inception", "block1", branches=branches()),
        LayerSpec("inception", "block2", branches=branches()),
        LayerSpec("flatten", "flatten"),
        LayerSpec("dense", "fc1", width=width),
        LayerSpec("dense", "fc2", width=classes, activation="none"),
    )
    return ArchConfig(layers, frame_len, classes, preset=f"teacher-{scale}")


# ---------------------------------------------------------------------------


def _layer_shapes(config: ArchConfig) -> dict[str, tuple]:
    """Chain the layer shapes; returns weight shapes keyed by param name."""
    shapes: dict[str, tuple] = {}
    c, h, w = 1, 2, config.frame_len
    flat = None
    for ls in config.layers:
        if ls.kind == "conv":
            kh, kw = ls.kernel
            shapes[f"{ls.name}.W"] = (ls.filters, c, kh, kw)
            shapes[f"{ls.name}.b"] = (ls.filters,)
            h = h + ls.pad[0][0] + ls.pad[0][1] - kh + 1
            w = w + ls.pad[1][0] + ls.pad[1][1] - kw + 1
            c = ls.filters
            if h <= 0 or w <= 0:
                raise ValueError(f"layer {ls.name}: kernel exceeds input {h}x{w}")
        elif ls.kind == "inception":
            out_c = 0
            oh = ow = None
            for bi, (nf, kh, kw, pad) in enumerate(ls.branches):
                shapes[f"{ls.name}.b{bi}.W"] = (nf, c, kh, kw)
                shapes[f"{ls.name}.b{bi}.b"] = (nf,)
                bh = h + pad[0][0] + pad[0][1] - kh + 1
                bw = w + pad[1][0] + pad[1][1] - kw + 1
                if oh is None:
                    oh, ow = bh, bw
                elif (bh, bw) != (oh, ow):
                    raise ValueError(f"{ls.name}: branch output shapes differ")
                out_c += nf
            c, h, w = out_c, oh, ow
        elif ls.kind == "flatten":
            flat = c * h * w
        elif ls.kind == "dense":
            fan_in = flat if flat is not None else c * h * w
            shapes[f"{ls.name}.W"] = (fan_in, ls.width)
            shapes[f"{ls.name}.b"] = (ls.width,)
            flat = ls.width
        elif ls.kind == "dropout":
            pass
        else:
            raise ValueError(f"unknown layer kind {ls.kind!r}")
    if flat != config.classes:
        raise ValueError(f"final layer width {flat} != classes {config.classes}")
    return shapes


class ModelGraph:
    """Parameters plus the forward pass defined by an ArchConfig."""

    def __init__(self, config: ArchConfig, params: dict[str, T.Tensor]):
        self.config = config
        self.params = params

    def forward(
        self,
        x,
        train: bool = False,
        rng: np.random.Generator | None = None,
        capture: dict | None = None,
    ) -> T.Tensor:
        """Logits for a batch. x: (N, 2, n) array or Tensor.

        capture, if given, receives {layer name: (input, post-activation
        output)} numpy pairs for dense layers.
        """
        if not isinstance(x, T.Tensor):
            x = T.Tensor(np.asarray(x, dtype=np.float64))
        if x.data.ndim != 3 or x.data.shape[1:] != (2, self.config.frame_len):
            raise ValueError(
                f"expected (N, 2, {self.config.frame_len}) input, got {x.data.shape}"
            )
        h = x.reshape(x.data.shape[0], 1, 2, self.config.frame_len)
        for ls in self.config.layers:
            if ls.kind == "conv":
                h = T.conv2d(h, self.params[f"{ls.name}.W"], self.params[f"{ls.name}.b"], ls.pad)
                if ls.activation == "relu":
                    h = h.relu()
            elif ls.kind == "inception":
                outs = []
                for bi, (_, _, _, pad) in enumerate(ls.branches):
                    o = T.conv2d(
                        h, self.params[f"{ls.name}.b{bi}.W"], self.params[f"{ls.name}.b{bi}.b"], pad
                    )
                    outs.append(o.relu())
                h = outs[0].concat(outs[1:], axis=1)
            elif ls.kind == "flatten":
                h = h.reshape(h.data.shape[0], -1)
            elif ls.kind == "dense":
                pre = h
                h = T.dense(h, self.params[f"{ls.name}.W"], self.params[f"{ls.name}.b"])
                if ls.activation == "relu":
                    h = h.relu()
                if capture is not None:
                    capture[ls.name] = (pre.data, h.data)
            elif ls.kind == "dropout":
                if train and ls.rate > 0.0:
                    if rng is None:
                        raise ValueError("training-mode forward through dropout needs an rng")
                    h = T.dropout(h, ls.rate, rng)
        return h

    def probs(self, x, temperature: float = 1.0) -> np.ndarray:
        return T.softmax_temperature(self.forward(x), temperature).data

    @contextmanager
    def params_detached(self):
        """Disable parameter gradients (input-gradient attacks run cheaper)."""
        for p in self.params.values():
            p.requires_grad = False
        try:
            yield
        finally:
            for p in self.params.values():
                p.requires_grad = True

    def copy(self) -> "ModelGraph":
        return ModelGraph(
            self.config,
            {k: T.Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()},
        )


def build_model(config: ArchConfig, seed: int) -> ModelGraph:
    """He-initialized model; deterministic in the seed."""
    shapes = _layer_shapes(config)
    params: dict[str, T.Tensor] = {}
    for name in sorted(shapes):
        shape = shapes[name]
        rng = derive_rng(seed, "init", name)
        if name.endswith(".b"):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            data = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        params[name] = T.Tensor(data, requires_grad=True, name=name)
    return ModelGraph(config, params)


def count_params(model: ModelGraph, frozen: frozenset | set = frozenset()) -> dict:
    """Per-parameter-group counts plus total / trainable / nonzero totals."""
    frozen_params = _expand_frozen(model, frozen)
    per_layer = {name: int(p.data.size) for name, p in model.params.items()}
    total = sum(per_layer.values())
    trainable = sum(n for k, n in per_layer.items() if k not in frozen_params)
    nonzero = sum(int(np.count_nonzero(p.data)) for p in model.params.values())
    return {"per_layer": per_layer, "total": total, "trainable": trainable, "nonzero": nonzero}


def _expand_frozen(model: ModelGraph, frozen) -> frozenset:
    """Freeze sets name layers ("fc1"); expand to parameter keys."""
    out = set()
    for name in frozen:
        keys = [k for k in model.params if k == name or k.startswith(name + ".")]
        if not keys:
            raise ValueError(f"frozen group {name!r} not found in model")
        out.update(keys)
    return frozenset(out)


def predict_label(model: ModelGraph, frame) -> int:
    """argmax over output probabilities; ties go to the lowest index."""
    x = frame.samples if hasattr(frame, "samples") else np.asarray(frame)
    logits = model.forward(x[None]).data[0]
    return int(np.argmax(logits))


def predict_batch(model: ModelGraph, x: np.ndarray, batch: int = 512) -> np.ndarray:
    out = np.empty(len(x), dtype=np.int64)
    for i in range(0, len(x), batch):
        out[i : i + batch] = np.argmax(model.forward(x[i : i + batch]).data, axis=1)
    return out


def accuracy(model: ModelGraph, dataset: Dataset) -> dict:
    """Overall and per-SNR-bucket accuracy on a dataset."""
    if not dataset.frames:
        raise ValueError("empty dataset")
    x, y, snr = dataset.stacked()
    pred = predict_batch(model, x)
    correct = pred == y
    per_snr = {
        float(s): float(np.mean(correct[snr == s])) for s in sorted(np.unique(snr))
    }
    return {"overall": float(np.mean(correct)), "per_snr": per_snr, "n": len(y)}


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0


def _onehot(labels: np.ndarray, classes: int) -> np.ndarray:
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def train_loop(
    model: ModelGraph,
    dataset: Dataset,
    cfg: TrainConfig,
    make_loss,
    frozen: frozenset | set = frozenset(),
    transform=None,
) -> list[float]:
    """Shared mini-batch loop. make_loss(logits, onehot, xb) -> scalar Tensor;
    transform(xb, yb) optionally replaces batch inputs (adversarial mixing).

    Returns the per-epoch mean loss curve. Batch order, dropout, and any
    transform randomness all derive from cfg.seed, so two runs with equal
    configs produce bit-identical parameter trajectories.
    """
    x, y, _ = dataset.stacked()
    if int(y.max()) >= model.config.classes:
        raise ValueError("dataset labels exceed model classes")
    onehot = _onehot(y, model.config.classes)
    shuffle_rng = derive_rng(cfg.seed, "shuffle")
    dropout_rng = derive_rng(cfg.seed, "dropout")
    opt = T.SgdOptimizer(
        model.params, T.SgdConfig(cfg.lr, cfg.momentum), _expand_frozen(model, frozen)
    )
    curve = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(x))
        losses = []
        for bi, start in enumerate(range(0, len(x), cfg.batch)):
            idx = order[start : start + cfg.batch]
            xb, yb = x[idx], onehot[idx]
            if transform is not None:
                xb = transform(xb, y[idx], idx)
            logits = model.forward(xb, train=True, rng=dropout_rng)
            loss = make_loss(logits, yb, xb)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(epoch, bi)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        curve.append(float(np.mean(losses)))
    return curve


def train_standard(model: ModelGraph, dataset: Dataset, cfg: TrainConfig) -> list[float]:
    """Plain cross-entropy training; mutates the model, returns the loss curve."""

    def ce_loss(logits, onehot, _xb):
        return T.cross_entropy(T.softmax_temperature(logits, 1.0), onehot)

    return train_loop(model, dataset, cfg, ce_loss)


# ---------------------------------------------------------------------------
# Checkpoints


def _checksum(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()[:8]


def save_checkpoint(model: ModelGraph, path: str, metadata: dict | None = None) -> None:
    """Binary checkpoint: magic, version, canonical JSON (arch + metadata),
    then little-endian float64 payloads with per-group 64-bit checksums.

    Parameters are stored at full precision so a load reproduces forward
    outputs bit-identically; pass metadata={"dtype": "f32"} to store a lossy
    half-size checkpoint instead.
    """
    meta = dict(metadata or {})
    dtype = meta.pop("dtype", "f64")
    head = {
        "arch": json.loads(model.config.to_json()),
        "metadata": meta,
        "dtype": dtype,
        "params": sorted(model.params),
    }
    blob = json.dumps(head, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for name in sorted(model.params):
            payload = model.params[name].data.astype("<f4" if dtype == "f32" else "<f8").tobytes()
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)
            fh.write(_checksum(payload))


def load_checkpoint(path: str) -> tuple[ModelGraph, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {raw[:4]!r}")
    version, jlen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported version {version}")
    off = 12
    head = json.loads(raw[off : off + jlen].decode())
    off += jlen
    config = ArchConfig.from_json(json.dumps(head["arch"]))
    shapes = _layer_shapes(config)
    if sorted(shapes) != head["params"]:
        raise CheckpointError("parameter list does not match architecture")
    np_dtype = "<f4" if head["dtype"] == "f32" else "<f8"
    params = {}
    for name in head["params"]:
        if off + 4 > len(raw):
            raise CheckpointError("truncated parameter block")
        (plen,) = struct.unpack_from("<I", raw, off)
        off += 4
        if off + plen + 8 > len(raw):
            raise CheckpointError("truncated parameter payload")
        payload = raw[off : off + plen]
        off += plen
        if raw[off : off + 8] != _checksum(payload):
            raise CheckpointError(f"checksum mismatch for {name}")
        off += 8
        data = np.frombuffer(payload, dtype=np_dtype).astype(np.float64)
        if data.size != int(np.prod(shapes[name])):
            raise CheckpointError(f"payload size mismatch for {name}")
        params[name] = T.Tensor(data.reshape(shapes[name]), requires_grad=True, name=name)
    return ModelGraph(config, params), head["metadata"]
