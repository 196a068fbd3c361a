"""End-to-end orchestration: train/compress/harden/attack/report.

The pipeline walks the model taxonomy (standard, distilled, distill-pruned,
each optionally adversarially trained), sweeps attacks over a PNR grid at a
fixed SNR slice, and emits a deterministic JSON/CSV report. All randomness
derives from one root seed by stage name.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import attack as A
from . import model as M
from . import prune as P
from .advtrain import AdvTrainConfig, adversarial_train
from .distill import DistillConfig, distill
from .seeds import derive_seed
from .signal import Dataset, GeneratorConfig, SplitSpec, generate_dataset, save_dataset, split

REPORT_VERSION = 1


class ContaminationError(RuntimeError):
    """Evaluation data does not match the split the model was trained on."""


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"pipeline stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass
class EvalReport:
    models: dict  # tag -> {clean_accuracy, provenance, n_params, ...}
    curves: list  # rows: {model, attack, pnr_db, snr_db, accuracy, n, seed}
    config_echo: dict
    format_version: int = REPORT_VERSION

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "models": self.models,
            "curves": self.curves,
            "config_echo": self.config_echo,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _check_separation(metadata: dict, test: Dataset) -> None:
    h = metadata.get("split_hash")
    if h is None:
        return
    if f"split:{h}:test" not in test.provenance:
        raise ContaminationError(
            f"model trained on split {h} but evaluation data provenance is "
            f"{test.provenance!r}"
        )


def _snr_slice(test: Dataset, snr_db: float | None) -> Dataset:
    if snr_db is None:
        return test
    frames = [f for f in test.frames if f.snr_db == snr_db]
    if not frames:
        raise ValueError(f"no test frames at SNR {snr_db} dB")
    return Dataset(frames, test.class_names, provenance=test.provenance)


def evaluate_under_attack(
    model: M.ModelGraph,
    test: Dataset,
    attack_cfg: A.AttackConfig,
    pnr_list_db: list[float],
    snr_db: float | None = None,
    metadata: dict | None = None,
    max_frames: int | None = None,
    seed: int = 0,
) -> list[dict]:
    """Accuracy under one attack at each PNR point. Per frame the budget
    converts to eps through that frame's own signal power.

    Rows carry a monotone-degradation flag: accuracy at this PNR must not
    beat the previous (lower-PNR) point by more than 3 points.
    """
    _check_separation(metadata or {}, test)
    sliced = _snr_slice(test, snr_db)
    x, y, snrs = sliced.stacked()
    if max_frames is not None and len(x) > max_frames:
        rng = np.random.default_rng(derive_seed(seed, "eval-subset"))
        idx = np.sort(rng.choice(len(x), size=max_frames, replace=False))
        x, y, snrs = x[idx], y[idx], snrs[idx]
    powers = np.sum(x**2, axis=(1, 2))
    rows = []
    prev_acc = None
    for pnr_db in pnr_list_db:
        eps = A.budget_in_kind_norm(
            attack_cfg.kind, A.pnr_to_epsilon(pnr_db, snrs, powers), x.shape[2]
        )
        batch = A.run_attack(model, x, y, attack_cfg, eps=eps)
        acc = float(np.mean(~batch.success))
        rows.append(
            {
                "attack": attack_cfg.kind,
                "pnr_db": float(pnr_db),
                "snr_db": None if snr_db is None else float(snr_db),
                "accuracy": acc,
                "n": int(len(x)),
                "seed": int(seed),
                "monotone_ok": bool(prev_acc is None or acc <= prev_acc + 0.03),
            }
        )
        prev_acc = acc
    return rows


def compare_report(
    models: dict[str, tuple[M.ModelGraph, dict]],
    attacks: list[A.AttackConfig],
    pnr_list_db: list[float],
    test: Dataset,
    snr_db: float | None = None,
    max_frames: int | None = None,
    seed: int = 0,
    config_echo: dict | None = None,
) -> EvalReport:
    """Clean accuracy plus attack curves for every tagged model."""
    first = next(iter(models.values()))[0]
    for tag, (m, _) in models.items():
        if m.config.classes != first.config.classes or m.config.frame_len != first.config.frame_len:
            raise ValueError(f"model {tag!r} input/classes mismatch")
    model_rows: dict = {}
    curves: list = []
    for tag in sorted(models):
        m, meta = models[tag]
        _check_separation(meta, test)
        sliced = _snr_slice(test, snr_db)
        clean = M.accuracy(m, sliced)
        model_rows[tag] = {
            "clean_accuracy": clean["overall"],
            "n_eval": clean["n"],
            "provenance": meta.get("provenance_tag", tag),
            "params_total": M.count_params(m)["total"],
        }
        for acfg in attacks:
            for row in evaluate_under_attack(
                m, test, acfg, pnr_list_db, snr_db, meta, max_frames, seed
            ):
                curves.append({"model": tag, **row})
    echo = dict(config_echo or {})
    echo.setdefault("snr_db", snr_db)
    echo.setdefault("pnr_list_db", [float(p) for p in pnr_list_db])
    echo.setdefault("seed", seed)
    return EvalReport(models=model_rows, curves=curves, config_echo=echo)


def export(report: EvalReport, fmt: str, path: str) -> None:
    """CSV: one row per curve point; JSON: the full report, canonical form."""
    if fmt == "json":
        with open(path, "w") as fh:
            fh.write(report.to_json())
    elif fmt == "csv":
        with open(path, "w") as fh:
            fh.write("model,attack,pnr_db,snr_db,accuracy,n,seed\n")
            for r in report.curves:
                fh.write(
                    f"{r['model']},{r['attack']},{r['pnr_db']},{r['snr_db']},"
                    f"{r['accuracy']},{r['n']},{r['seed']}\n"
                )
    else:
        raise ValueError(f"unknown export format {fmt!r}")


# ---------------------------------------------------------------------------
# Pipeline

DEFAULT_PNR_SWEEP = [float(p) for p in range(-20, 1, 2)]


def run_pipeline(config: dict, out_dir: str) -> EvalReport | None:
    """Execute the requested stages; every artifact is persisted in out_dir.

    Stages: dataset, train (teacher + standard student), distill, prune,
    advtrain, eval. prune requires distill; advtrain hardens whichever
    models exist; eval reports on everything produced.
    """
    os.makedirs(out_dir, exist_ok=True)
    stages = config.get("stages", ["dataset", "train", "distill", "prune", "advtrain", "eval"])
    if "prune" in stages and "distill" not in stages:
        raise ValueError("prune stage requires the distill stage (it prunes the distilled model)")
    root = int(config.get("seed", 0))
    state: dict = {"models": {}}

    def stage(name):
        return name in stages

    try:
        _stage_dataset(config, out_dir, root, state)
    except Exception as e:  # noqa: BLE001 - report the failing stage
        raise PipelineError("dataset", e) from e
    for name, fn in (
        ("train", _stage_train),
        ("distill", _stage_distill),
        ("prune", _stage_prune),
        ("advtrain", _stage_advtrain),
    ):
        if stage(name):
            try:
                fn(config, out_dir, root, state)
            except PipelineError:
                raise
            except Exception as e:  # noqa: BLE001
                raise PipelineError(name, e) from e
    if stage("eval"):
        try:
            return _stage_eval(config, out_dir, root, state)
        except Exception as e:  # noqa: BLE001
            raise PipelineError("eval", e) from e
    return None


def _dataset_config(config: dict, root: int) -> GeneratorConfig:
    d = config.get("dataset", {})
    snr = d.get("snr_db", [10.0])
    if isinstance(snr, dict):
        snr = list(np.arange(snr["min"], snr["max"] + 1e-9, snr["step"]))
    return GeneratorConfig(
        classes=tuple(d.get("classes", ["BPSK", "QPSK", "PAM4", "GFSK"])),
        snr_grid_db=tuple(float(s) for s in snr),
        frames_per_cell=int(d.get("per_cell", 250)),
        seed=derive_seed(root, "dataset"),
        frame_len=int(d.get("frame_len", 128)),
        normalize=bool(d.get("normalize", True)),
    )


def _stage_dataset(config, out_dir, root, state):
    gen = _dataset_config(config, root)
    ds = generate_dataset(gen)
    save_dataset(ds, os.path.join(out_dir, "dataset.iqds"))
    frac = float(config.get("split", {}).get("train_fraction", 0.5))
    train, test = split(ds, SplitSpec(frac, seed=derive_seed(root, "split")))
    state.update(dataset=ds, train=train, test=test)
    state["split_hash"] = train.provenance.rsplit("split:", 1)[1].split(":")[0]


def _train_cfg(config: dict, key: str, root: int, stage_name: str) -> M.TrainConfig:
    t = config.get(key, {})
    return M.TrainConfig(
        epochs=int(t.get("epochs", 20)),
        batch=int(t.get("batch", 64)),
        lr=float(t.get("lr", 0.01)),
        momentum=float(t.get("momentum", 0.9)),
        seed=derive_seed(root, stage_name),
    )


def _save(state, out_dir, tag, model, extra=None):
    meta = {"provenance_tag": tag, "split_hash": state["split_hash"]}
    meta.update(extra or {})
    path = os.path.join(out_dir, f"{tag}.amcm")
    M.save_checkpoint(model, path, meta)
    state["models"][tag] = (model, meta)


def _stage_train(config, out_dir, root, state):
    k = len(state["train"].class_names)
    n = state["train"].frames[0].samples.shape[1]
    scale = config.get("scale", "desk")
    teacher = M.build_model(M.teacher_arch(k, scale, n), derive_seed(root, "teacher-init"))
    curve_t = M.train_standard(teacher, state["train"], _train_cfg(config, "train", root, "teacher-train"))
    _save(state, out_dir, "teacher", teacher, {"loss_curve": curve_t})
    student = M.build_model(M.student_arch(k, scale, n), derive_seed(root, "student-init"))
    curve_s = M.train_standard(student, state["train"], _train_cfg(config, "train", root, "standard-train"))
    _save(state, out_dir, "standard", student, {"loss_curve": curve_s})


def _stage_distill(config, out_dir, root, state):
    d = config.get("distill", {})
    t = config.get("train", {})
    k = len(state["train"].class_names)
    n = state["train"].frames[0].samples.shape[1]
    student = M.build_model(
        M.student_arch(k, config.get("scale", "desk"), n), derive_seed(root, "student-init")
    )
    cfg = DistillConfig(
        temperature=float(d.get("temperature", 10.0)),
        alpha=float(d.get("alpha", 0.1)),
        epochs=int(d.get("epochs", t.get("epochs", 20))),
        batch=int(d.get("batch", t.get("batch", 64))),
        lr=float(d.get("lr", t.get("lr", 0.01))),
        momentum=float(d.get("momentum", t.get("momentum", 0.9))),
        seed=derive_seed(root, "distill"),
    )
    teacher = state["models"]["teacher"][0]
    curve = distill(teacher, student, state["train"], cfg)
    _save(state, out_dir, "distilled", student,
          {"loss_curve": curve, "temperature": cfg.temperature, "alpha": cfg.alpha})


def _stage_prune(config, out_dir, root, state):
    p = config.get("prune", {})
    cfg = P.PruneConfig(
        layer=p.get("layer", "fc1"),
        eta=float(p.get("eta", 0.8)),
        probe_size=int(p.get("probe", 512)),
        seed=derive_seed(root, "prune"),
    )
    distilled = state["models"]["distilled"][0]
    res = P.prune_layer(distilled, state["train"], cfg)
    pruned = P.apply_pruning(distilled, cfg.layer, res)
    report = {
        "eta": res.eta,
        "sparsity": res.sparsity,
        "residual": res.residual,
        "iterations": res.iterations,
        "converged": res.converged,
    }
    with open(os.path.join(out_dir, "sparsity_report.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True)
    _save(state, out_dir, "distill_pruned", pruned, {"sparsity": res.sparsity})


def _stage_advtrain(config, out_dir, root, state):
    a = config.get("advtrain", {})
    t = config.get("train", {})
    base = AdvTrainConfig(
        pnr_db=float(a.get("pnr_db", -10.0)),
        ref_snr_db=float(a.get("ref_snr_db", 10.0)),
        pgd_iters=int(a.get("pgd_iters", 10)),
        epochs=int(a.get("epochs", t.get("epochs", 20))),
        batch=int(a.get("batch", t.get("batch", 64))),
        lr=float(a.get("lr", t.get("lr", 0.01))),
        momentum=float(a.get("momentum", t.get("momentum", 0.9))),
        seed=0,
    )
    for tag in [t for t in ("standard", "distilled", "distill_pruned") if t in state["models"]]:
        src, _ = state["models"][tag]
        hardened = src.copy()
        cfg = AdvTrainConfig(**{**base.__dict__, "seed": derive_seed(root, "advtrain", tag)})
        curve = adversarial_train(hardened, state["train"], cfg)
        _save(state, out_dir, f"{tag}_adv", hardened,
              {"loss_curve": curve, "at_pnr_db": cfg.pnr_db})


def _stage_eval(config, out_dir, root, state) -> EvalReport:
    e = config.get("eval", {})
    attacks = [
        A.AttackConfig(kind=k, epsilon=1.0,
                       iters=int(e.get("pgd_iters", 10)) if k == "pgd" else 50)
        for k in e.get("attacks", ["pgd"])
    ]
    report = compare_report(
        {t: m for t, m in state["models"].items() if t != "teacher"},
        attacks,
        [float(p) for p in e.get("pnr_db", DEFAULT_PNR_SWEEP)],
        state["test"],
        snr_db=e.get("snr_db", 10.0),
        max_frames=e.get("max_frames"),
        seed=derive_seed(root, "eval"),
        config_echo={"pipeline": config},
    )
    export(report, "json", os.path.join(out_dir, "report.json"))
    export(report, "csv", os.path.join(out_dir, "report.csv"))
    return report
