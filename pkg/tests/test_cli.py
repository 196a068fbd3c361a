import json

import numpy as np
import pytest

from modrobust import cli
from modrobust import model as M
from modrobust import signal as S


@pytest.fixture(scope="module")
def cli_workdir(tmp_path_factory):
    """A dataset plus trained checkpoints produced through the CLI itself."""
    d = tmp_path_factory.mktemp("cli")
    data = str(d / "ds.iqds")
    rc = cli.main([
        "dataset", "gen", "--classes", "BPSK,QPSK,PAM4,GFSK",
        "--per-cell", "60", "--seed", "7", "--out", data,
    ])
    assert rc == 0
    teacher = str(d / "teacher.amcm")
    rc = cli.main([
        "train", "--arch", "teacher", "--data", data, "--epochs", "3",
        "--seed", "1", "--out", teacher,
    ])
    assert rc == 0
    student = str(d / "student.amcm")
    rc = cli.main([
        "train", "--data", data, "--epochs", "3", "--seed", "2", "--out", student,
    ])
    assert rc == 0
    return d, data, teacher, student


class TestDataset:
    def test_gen_and_info(self, cli_workdir, capsys):
        _, data, _, _ = cli_workdir
        assert cli.main(["dataset", "info", data]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["frames"] == 4 * 60
        assert info["classes"] == ["BPSK", "QPSK", "PAM4", "GFSK"]
        assert info["snr_db"] == [10.0]

    def test_gen_snr_grid(self, tmp_path):
        out = str(tmp_path / "grid.iqds")
        rc = cli.main([
            "dataset", "gen", "--snr-min", "0", "--snr-max", "4", "--snr-step", "2",
            "--per-cell", "2", "--out", out,
        ])
        assert rc == 0
        ds = S.load_dataset(out)
        assert len(ds) == 4 * 3 * 2


class TestTrainedArtifacts:
    def test_checkpoints_load(self, cli_workdir):
        _, _, teacher, student = cli_workdir
        t, tm = M.load_checkpoint(teacher)
        s, sm = M.load_checkpoint(student)
        assert tm["provenance_tag"] == "teacher"
        assert sm["provenance_tag"] == "standard"
        assert "split_hash" in sm and len(sm["loss_curve"]) == 3

    def test_distill_prune_advtrain_eval_chain(self, cli_workdir, capsys):
        d, data, teacher, _ = cli_workdir
        distilled = str(d / "distilled.amcm")
        rc = cli.main([
            "distill", "--teacher", teacher, "--data", data, "--epochs", "3",
            "--seed", "3", "--out", distilled,
        ])
        assert rc == 0
        pruned = str(d / "pruned.amcm")
        rc = cli.main([
            "prune", "--model", distilled, "--data", data, "--eta", "2.0",
            "--probe", "120", "--out", pruned,
        ])
        assert rc == 0
        report = json.loads(capsys.readouterr().out.strip().split("\n")[-1])
        assert set(report) == {"eta", "sparsity", "residual", "iterations", "converged"}
        hardened = str(d / "hardened.amcm")
        rc = cli.main([
            "advtrain", "--model", pruned, "--data", data, "--epochs", "1",
            "--pgd-iters", "2", "--out", hardened,
        ])
        assert rc == 0
        m, meta = M.load_checkpoint(hardened)
        assert meta["provenance_tag"] == "distill_pruned_adv"
        out = str(d / "report.json")
        csv = str(d / "report.csv")
        rc = cli.main([
            "eval", "--models", f"pruned={pruned},hardened={hardened}",
            "--data", data, "--pnr-db=-10,0", "--pgd-iters", "2",
            "--max-frames", "40", "--out", out, "--csv", csv,
        ])
        assert rc == 0
        rep = json.load(open(out))
        assert set(rep["models"]) == {"pruned", "hardened"}
        assert len(open(csv).read().strip().split("\n")) == 1 + 4

    def test_attack_writes_batch(self, cli_workdir):
        from modrobust import attack as A

        d, data, _, student = cli_workdir
        out = str(d / "adv.iqds")
        rc = cli.main([
            "attack", "--model", student, "--data", data, "--kind", "fgsm",
            "--pnr-db", "-5", "--snr-db", "10", "--out", out,
        ])
        assert rc == 0
        perturbed, delta, labels, success = A.load_adv_batch(out)
        assert perturbed.shape == delta.shape
        assert len(labels) == len(success) == len(perturbed)


class TestPipelineCommand:
    def test_pipeline_from_config(self, tmp_path):
        cfg = {
            "seed": 5,
            "dataset": {"per_cell": 30},
            "train": {"epochs": 2},
            "stages": ["dataset", "train"],
        }
        cpath = tmp_path / "cfg.json"
        cpath.write_text(json.dumps(cfg))
        out = tmp_path / "run"
        rc = cli.main(["pipeline", "--config", str(cpath), "--out-dir", str(out)])
        assert rc == 0
        assert (out / "standard.amcm").exists()

    def test_seed_override(self, tmp_path):
        cfg = {"seed": 5, "dataset": {"per_cell": 10}, "stages": ["dataset"]}
        cpath = tmp_path / "cfg.json"
        cpath.write_text(json.dumps(cfg))
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        cli.main(["pipeline", "--config", str(cpath), "--out-dir", str(a)])
        cli.main(["pipeline", "--config", str(cpath), "--out-dir", str(b), "--seed", "5"])
        cli.main(["pipeline", "--config", str(cpath), "--out-dir", str(c), "--seed", "6"])
        da = (a / "dataset.iqds").read_bytes()
        assert da == (b / "dataset.iqds").read_bytes()
        assert da != (c / "dataset.iqds").read_bytes()
