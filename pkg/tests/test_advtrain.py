import numpy as np
import pytest

from modrobust import advtrain as AT
from modrobust import attack as A
from modrobust import model as M
from modrobust import prune as P


class TestConfig:
    def test_mix_bounds(self):
        with pytest.raises(ValueError):
            AT.AdvTrainConfig(mix_pgd=0.6, mix_fgsm=0.6)

    def test_unknown_attack(self):
        with pytest.raises(ValueError):
            AT.AdvTrainConfig(attacks=("deepfool",))

    def test_epsilon_from_pnr(self):
        cfg = AT.AdvTrainConfig(pnr_db=-10.0, ref_snr_db=10.0)
        l2 = float(A.pnr_to_epsilon(-10.0, 10.0, 128.0))
        assert AT._epsilon(cfg, 128, "fgm") == pytest.approx(l2, abs=1e-12)
        # Linf kinds get the power budget spread over all 2n samples
        assert AT._epsilon(cfg, 128, "pgd") == pytest.approx(l2 / np.sqrt(256.0), abs=1e-12)


class TestFrozenContract:
    def test_fc1_byte_identical(self, trained_desk_model, desk_split):
        train, _ = desk_split
        m = trained_desk_model.copy()
        w_before = m.params["fc1.W"].data.tobytes()
        b_before = m.params["fc1.b"].data.tobytes()
        AT.adversarial_train(m, train, AT.AdvTrainConfig(epochs=1, pgd_iters=2, seed=0))
        assert m.params["fc1.W"].data.tobytes() == w_before
        assert m.params["fc1.b"].data.tobytes() == b_before
        # other layers moved
        assert m.params["fc2.W"].data.tobytes() != trained_desk_model.params["fc2.W"].data.tobytes()

    def test_pruned_zero_pattern_preserved(self, trained_desk_model, desk_split):
        train, _ = desk_split
        res = P.prune_layer(
            trained_desk_model, train, P.PruneConfig(eta=2.0, probe_size=256, max_iters=300)
        )
        pruned = P.apply_pruning(trained_desk_model, "fc1", res)
        zero_mask = pruned.params["fc1.W"].data == 0.0
        AT.adversarial_train(pruned, train, AT.AdvTrainConfig(epochs=1, pgd_iters=2, seed=0))
        assert np.all(pruned.params["fc1.W"].data[zero_mask] == 0.0)


class TestDegeneracy:
    def test_zero_mix_equals_standard_training(self, desk_split):
        """mix 0/0 with clean retention is plain CE training, bit for bit
        (with the same frozen set)."""
        train, _ = desk_split
        a = M.build_model(M.student_arch(4, "desk"), 21)
        b = M.build_model(M.student_arch(4, "desk"), 21)
        curve_at = AT.adversarial_train(
            a, train, AT.AdvTrainConfig(mix_pgd=0.0, mix_fgsm=0.0, freeze=(), epochs=2, seed=5)
        )
        curve_std = M.train_standard(b, train, M.TrainConfig(epochs=2, seed=5))
        assert curve_at == curve_std
        for k in a.params:
            assert np.array_equal(a.params[k].data, b.params[k].data)

    def test_deterministic(self, desk_split):
        train, _ = desk_split
        cfg = AT.AdvTrainConfig(epochs=1, pgd_iters=2, seed=8)
        a = M.build_model(M.student_arch(4, "desk"), 22)
        b = M.build_model(M.student_arch(4, "desk"), 22)
        ca = AT.adversarial_train(a, train, cfg)
        cb = AT.adversarial_train(b, train, cfg)
        assert ca == cb
        for k in a.params:
            assert np.array_equal(a.params[k].data, b.params[k].data)


class TestBehavior:
    def test_improves_robustness(self, trained_desk_model, desk_split):
        """AT raises accuracy under the PGD budget it trained against."""
        train, test = desk_split
        x, y, _ = test.stacked()
        cfg = AT.AdvTrainConfig(pnr_db=-4.0, epochs=4, pgd_iters=5, seed=3)
        eps = AT._epsilon(cfg, 128, "pgd")

        def pgd_acc(m):
            batch = A.attack_pgd(m, x, y, eps, eps * 0.25, 5)
            return float(np.mean(M.predict_batch(m, batch.perturbed) == y))

        before = pgd_acc(trained_desk_model)
        hardened = trained_desk_model.copy()
        AT.adversarial_train(hardened, train, cfg)
        after = pgd_acc(hardened)
        assert after > before

    def test_replace_mode_fills_batch(self, trained_desk_model, desk_split):
        train, _ = desk_split
        m = trained_desk_model.copy()
        curve = AT.adversarial_train(
            m, train,
            AT.AdvTrainConfig(epochs=1, pgd_iters=2, clean_retained=False, seed=0),
        )
        assert len(curve) == 1 and np.isfinite(curve[0])

    def test_precomputed_mode_runs(self, trained_desk_model, desk_split):
        train, _ = desk_split
        m = trained_desk_model.copy()
        curve = AT.adversarial_train(
            m, train, AT.AdvTrainConfig(epochs=2, pgd_iters=2, on_the_fly=False, seed=0)
        )
        assert len(curve) == 2

    def test_ablation_single_attack(self, trained_desk_model, desk_split):
        train, _ = desk_split
        m = trained_desk_model.copy()
        curve = AT.adversarial_train(
            m, train, AT.AdvTrainConfig(epochs=1, attacks=("fgm",), seed=0)
        )
        assert len(curve) == 1
