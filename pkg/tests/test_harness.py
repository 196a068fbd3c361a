import json

import numpy as np
import pytest

from modrobust import attack as A
from modrobust import harness as H
from modrobust import model as M
from modrobust import signal as S

SMALL_PIPELINE = {
    "seed": 3,
    "dataset": {"classes": ["BPSK", "QPSK", "PAM4", "GFSK"], "snr_db": [10.0], "per_cell": 60},
    "train": {"epochs": 3},
    "distill": {"epochs": 3},
    "prune": {"eta": 2.0, "probe": 120},
    "advtrain": {"epochs": 1, "pgd_iters": 2},
    "eval": {"attacks": ["pgd"], "pnr_db": [-10.0, 0.0], "pgd_iters": 2, "max_frames": 60},
}


class TestEvaluateUnderAttack:
    def test_rows_and_monotone_flags(self, trained_desk_model, desk_split):
        _, test = desk_split
        rows = H.evaluate_under_attack(
            trained_desk_model, test, A.AttackConfig("fgsm", epsilon=1.0),
            [-16.0, -8.0, 0.0], snr_db=10.0, max_frames=80,
        )
        assert [r["pnr_db"] for r in rows] == [-16.0, -8.0, 0.0]
        assert all(0.0 <= r["accuracy"] <= 1.0 for r in rows)
        assert rows[0]["monotone_ok"] is True
        assert all(set(r) >= {"attack", "pnr_db", "accuracy", "n", "monotone_ok"} for r in rows)

    def test_accuracy_degrades_with_budget(self, trained_desk_model, desk_split):
        _, test = desk_split
        rows = H.evaluate_under_attack(
            trained_desk_model, test, A.AttackConfig("pgd", epsilon=1.0, iters=5),
            [-20.0, 0.0], snr_db=10.0,
        )
        assert rows[1]["accuracy"] <= rows[0]["accuracy"]

    def test_missing_snr_slice(self, trained_desk_model, desk_split):
        _, test = desk_split
        with pytest.raises(ValueError):
            H.evaluate_under_attack(
                trained_desk_model, test, A.AttackConfig("fgsm", epsilon=1.0),
                [0.0], snr_db=-42.0,
            )

    def test_contamination_fatal(self, trained_desk_model, desk_dataset, desk_split):
        train, _ = desk_split
        meta = {"split_hash": "deadbeef00000000"}
        with pytest.raises(H.ContaminationError):
            H.evaluate_under_attack(
                trained_desk_model, train, A.AttackConfig("fgsm", epsilon=1.0),
                [0.0], metadata=meta,
            )

    def test_matching_split_hash_accepted(self, trained_desk_model, desk_dataset, desk_split):
        _, test = desk_split
        h = S.split_hash(desk_dataset, S.SplitSpec(0.5, seed=0))
        rows = H.evaluate_under_attack(
            trained_desk_model, test, A.AttackConfig("fgsm", epsilon=1.0),
            [0.0], metadata={"split_hash": h}, max_frames=40,
        )
        assert len(rows) == 1


class TestCompareReport:
    def test_report_and_exports(self, trained_desk_model, desk_split, tmp_path):
        _, test = desk_split
        other = M.build_model(M.student_arch(4, "desk"), 77)
        models = {
            "trained": (trained_desk_model, {"provenance_tag": "standard"}),
            "untrained": (other, {}),
        }
        rep = H.compare_report(
            models, [A.AttackConfig("fgsm", epsilon=1.0)], [-10.0, 0.0], test,
            snr_db=10.0, max_frames=40,
        )
        assert set(rep.models) == {"trained", "untrained"}
        assert len(rep.curves) == 4  # 2 models x 2 PNR points
        jp, cp = str(tmp_path / "r.json"), str(tmp_path / "r.csv")
        H.export(rep, "json", jp)
        H.export(rep, "csv", cp)
        back = json.load(open(jp))
        assert back["format_version"] == H.REPORT_VERSION
        assert back["models"]["trained"]["clean_accuracy"] == rep.models["trained"]["clean_accuracy"]
        lines = open(cp).read().strip().split("\n")
        assert lines[0] == "model,attack,pnr_db,snr_db,accuracy,n,seed"
        assert len(lines) == 5

    def test_json_deterministic(self, trained_desk_model, desk_split):
        _, test = desk_split
        mk = lambda: H.compare_report(
            {"m": (trained_desk_model, {})}, [A.AttackConfig("fgsm", epsilon=1.0)],
            [-6.0], test, snr_db=10.0, max_frames=30,
        ).to_json()
        assert mk() == mk()

    def test_mismatched_models_rejected(self, trained_desk_model, desk_split):
        _, test = desk_split
        other = M.build_model(M.student_arch(5, "desk"), 0)
        with pytest.raises(ValueError):
            H.compare_report(
                {"a": (trained_desk_model, {}), "b": (other, {})},
                [A.AttackConfig("fgsm", epsilon=1.0)], [0.0], test,
            )

    def test_unknown_export_format(self, trained_desk_model, desk_split):
        _, test = desk_split
        rep = H.compare_report(
            {"m": (trained_desk_model, {})}, [], [], test, snr_db=10.0
        )
        with pytest.raises(ValueError):
            H.export(rep, "xml", "/tmp/nope.xml")


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    report = H.run_pipeline(SMALL_PIPELINE, str(out))
    return out, report


class TestPipeline:
    def test_artifacts(self, pipeline_run):
        out, report = pipeline_run
        expected = [
            "dataset.iqds", "teacher.amcm", "standard.amcm", "distilled.amcm",
            "distill_pruned.amcm", "standard_adv.amcm", "distilled_adv.amcm",
            "distill_pruned_adv.amcm", "sparsity_report.json", "report.json", "report.csv",
        ]
        for name in expected:
            assert (out / name).exists(), name
        assert report is not None
        assert set(report.models) == {
            "standard", "distilled", "distill_pruned",
            "standard_adv", "distilled_adv", "distill_pruned_adv",
        }

    def test_checkpoints_reload(self, pipeline_run):
        out, _ = pipeline_run
        m, meta = M.load_checkpoint(str(out / "distill_pruned.amcm"))
        assert meta["provenance_tag"] == "distill_pruned"
        assert "split_hash" in meta
        assert 0.0 < meta["sparsity"] <= 1.0

    def test_rerun_byte_identical_report(self, pipeline_run, tmp_path):
        out, _ = pipeline_run
        H.run_pipeline(SMALL_PIPELINE, str(tmp_path / "again"))
        a = (out / "report.json").read_bytes()
        b = (tmp_path / "again" / "report.json").read_bytes()
        assert a == b

    def test_prune_requires_distill(self, tmp_path):
        cfg = dict(SMALL_PIPELINE, stages=["dataset", "train", "prune"])
        with pytest.raises(ValueError):
            H.run_pipeline(cfg, str(tmp_path / "bad"))

    def test_subset_of_stages(self, tmp_path):
        cfg = dict(SMALL_PIPELINE, stages=["dataset", "train"])
        out = tmp_path / "two"
        report = H.run_pipeline(cfg, str(out))
        assert report is None
        made = sorted(p.name for p in out.iterdir())
        assert made == ["dataset.iqds", "standard.amcm", "teacher.amcm"]

    def test_stage_failure_is_labeled(self, tmp_path):
        cfg = dict(SMALL_PIPELINE)
        cfg["dataset"] = dict(cfg["dataset"], classes=["BPSK"])  # too few classes
        with pytest.raises(H.PipelineError) as ei:
            H.run_pipeline(cfg, str(tmp_path / "fail"))
        assert ei.value.stage == "dataset"
