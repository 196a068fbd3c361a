import numpy as np
import pytest

from modrobust import model as M
from modrobust import prune as P

cvxpy = pytest.importorskip("cvxpy")

RNG = np.random.default_rng(23)


def random_instance(rng, d, m, u):
    """A solvable instance: activations from a random planted layer."""
    y_prev = rng.standard_normal((d, u))
    w_true = rng.standard_normal((d, m)) * (rng.random((d, m)) < 0.4)
    y_k = np.maximum(w_true.T @ y_prev, 0.0)
    return y_prev, y_k


def cvxpy_trim(y_prev, y_k, eta):
    """Reference solve of the same convex program with a generic solver."""
    d, _ = y_prev.shape
    m, _ = y_k.shape
    v = cvxpy.Variable((d, m))
    t = cvxpy.Variable(y_k.shape, nonneg=True)  # epigraph of pos(pre) off support
    pre = v.T @ y_prev
    support = (y_k > 0).astype(float)
    resid = cvxpy.multiply(support, pre - y_k) + cvxpy.multiply(1.0 - support, t)
    prob = cvxpy.Problem(
        cvxpy.Minimize(cvxpy.norm1(cvxpy.vec(v, order="F"))),
        [t >= pre, cvxpy.norm(resid, "fro") <= eta],
    )
    prob.solve(solver=cvxpy.CLARABEL)
    return prob.value, v.value


class TestHelpers:
    def test_sparsity(self):
        assert P.sparsity(np.zeros((3, 3))) == 1.0
        assert P.sparsity(np.ones((2, 2))) == 0.0
        assert P.sparsity(np.array([0.0, 1.0, 0.0, 1.0])) == 0.5

    def test_sparsity_counts_sub_threshold(self):
        w = np.array([1e-9, 1.0])
        assert P.sparsity(w) == 0.5

    def test_soft_threshold(self):
        x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        assert np.allclose(P.soft_threshold(x, 1.0), [-1.0, 0.0, 0.0, 0.0, 1.0])

    def test_relu_residual_zero_on_planted(self):
        rng = np.random.default_rng(8)
        y_prev = rng.standard_normal((6, 10))
        w_true = rng.standard_normal((6, 3))
        y_k = np.maximum(w_true.T @ y_prev, 0.0)
        assert P.relu_residual(w_true, y_prev, y_k) == 0.0
        assert P.relu_residual(w_true + 1.0, y_prev, y_k) > 0.1


class TestFidelityProjection:
    def test_inside_is_identity(self):
        y_k = np.abs(RNG.standard_normal((3, 5)))
        z0 = y_k + 1e-3 * RNG.standard_normal((3, 5))
        out = P._project_fidelity(z0, y_k, y_k > 0, eta=1.0)
        assert np.array_equal(out, z0)

    def test_projection_lands_on_boundary(self):
        y_k = np.abs(RNG.standard_normal((4, 6)))
        z0 = y_k + RNG.standard_normal((4, 6)) * 3.0
        eta = 0.5
        out = P._project_fidelity(z0, y_k, y_k > 0, eta)
        viol = np.where(y_k > 0, out - y_k, np.maximum(out, 0.0))
        assert np.linalg.norm(viol) == pytest.approx(eta, rel=1e-9)

    def test_negative_off_support_untouched(self):
        y_k = np.zeros((1, 3))
        z0 = np.array([[-5.0, -1.0, 10.0]])
        out = P._project_fidelity(z0, y_k, y_k > 0, eta=0.1)
        assert out[0, 0] == -5.0 and out[0, 1] == -1.0
        assert out[0, 2] == pytest.approx(0.1)


class TestTrim:
    def test_huge_eta_gives_zero_solution(self):
        y_prev, y_k = random_instance(RNG, 8, 4, 12)
        eta = 2.0 * np.linalg.norm(y_k)
        res = P.trim(y_prev, y_k, eta, P.PruneConfig(eta=eta))
        assert res.sparsity > 0.95
        assert res.objective < 1e-6

    def test_fidelity_bound_honored(self):
        for _ in range(5):
            y_prev, y_k = random_instance(RNG, 10, 5, 20)
            eta = 0.3 * np.linalg.norm(y_k)
            res = P.trim(y_prev, y_k, eta, P.PruneConfig(eta=eta, max_iters=1000))
            assert res.converged
            assert res.residual <= eta * 1.05

    def test_no_densification(self):
        """||W_sparse||_1 never exceeds ||W_init||_1 when warm started."""
        y_prev, y_k = random_instance(RNG, 8, 4, 30)
        w0 = np.linalg.lstsq(y_prev.T, y_k.T, rcond=None)[0]
        eta = 0.2 * np.linalg.norm(y_k)
        res = P.trim(y_prev, y_k, eta, P.PruneConfig(eta=eta, max_iters=1000), w_init=w0)
        assert res.objective <= np.sum(np.abs(w0)) * (1 + 1e-6)

    def test_monotone_in_eta(self):
        y_prev, y_k = random_instance(RNG, 10, 5, 25)
        scale = np.linalg.norm(y_k)
        etas = [0.05, 0.1, 0.2, 0.4, 0.8]
        sps = [
            P.trim(y_prev, y_k, e * scale, P.PruneConfig(eta=e * scale, max_iters=1000)).sparsity
            for e in etas
        ]
        for lo, hi in zip(sps, sps[1:]):
            assert lo <= hi + 0.02

    def test_infeasible_eta_raises(self):
        y_prev = RNG.standard_normal((2, 10))
        y_k = np.abs(RNG.standard_normal((5, 10))) + 1.0  # rank-2 inputs can't hit rank-5 targets
        with pytest.raises(P.InfeasibleEtaError):
            P.trim(y_prev, y_k, 1e-9, P.PruneConfig(eta=1e-9))

    def test_invalid_eta(self):
        y_prev, y_k = random_instance(RNG, 4, 2, 6)
        with pytest.raises(ValueError):
            P.trim(y_prev, y_k, 0.0, P.PruneConfig())
        with pytest.raises(ValueError):
            P.trim(y_prev, y_k, -1.0, P.PruneConfig())

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            P.trim(np.ones((3, 5)), np.ones((2, 6)), 1.0, P.PruneConfig())

    def test_hard_threshold_idempotent(self):
        y_prev, y_k = random_instance(RNG, 8, 4, 16)
        eta = 0.3 * np.linalg.norm(y_k)
        res = P.trim(y_prev, y_k, eta, P.PruneConfig(eta=eta, max_iters=1000))
        w = res.weights
        again = np.where(np.abs(w) <= P.ZERO_THRESHOLD, 0.0, w)
        assert np.array_equal(w, again)
        assert P.sparsity(again) == res.sparsity


class TestConvexOracle:
    def test_matches_generic_solver(self):
        """ADMM objective within 1% of a generic convex solver on 30 random
        instances up to 20x20, with the fidelity bound honored."""
        rng = np.random.default_rng(3141)
        for trial in range(30):
            d = int(rng.integers(4, 21))
            m = int(rng.integers(2, 21))
            u = int(rng.integers(max(d, m), 2 * max(d, m) + 5))
            y_prev, y_k = random_instance(rng, d, m, u)
            eta = float(rng.uniform(0.1, 0.5)) * np.linalg.norm(y_k)
            ref_obj, _ = cvxpy_trim(y_prev, y_k, eta)
            res = P.trim(y_prev, y_k, eta, P.PruneConfig(eta=eta, max_iters=2000))
            assert res.residual <= eta * 1.05, f"trial {trial}"
            assert res.objective <= ref_obj * 1.01 + 1e-6, f"trial {trial}"


class TestModelPruning:
    def test_prune_layer_result(self, trained_desk_model, desk_split):
        train, _ = desk_split
        res = P.prune_layer(
            trained_desk_model, train, P.PruneConfig(eta=2.0, probe_size=256, max_iters=300)
        )
        assert res.weights.shape == trained_desk_model.params["fc1.W"].data.shape
        assert res.bias.shape == trained_desk_model.params["fc1.b"].data.shape
        assert 0.0 < res.sparsity <= 1.0
        assert np.isfinite(res.residual)

    def test_apply_pruning_preserves_original(self, trained_desk_model, desk_split):
        train, _ = desk_split
        res = P.prune_layer(
            trained_desk_model, train, P.PruneConfig(eta=2.0, probe_size=256, max_iters=300)
        )
        before = trained_desk_model.params["fc1.W"].data.copy()
        pruned = P.apply_pruning(trained_desk_model, "fc1", res)
        assert np.array_equal(trained_desk_model.params["fc1.W"].data, before)
        assert np.array_equal(pruned.params["fc1.W"].data, res.weights)
        # nonzero bookkeeping: zero count matches sparsity within rounding
        counts = M.count_params(pruned)
        w = pruned.params["fc1.W"].data
        assert np.count_nonzero(w) == w.size - int(round(res.sparsity * w.size))

    def test_apply_pruning_validation(self, trained_desk_model):
        res = P.SparseLayerResult(
            weights=np.zeros((3, 3)), bias=np.zeros(3), sparsity=1.0, residual=0.0,
            objective=0.0, iterations=0, converged=True, eta=1.0,
        )
        with pytest.raises(ValueError):
            P.apply_pruning(trained_desk_model, "fc9", res)
        with pytest.raises(ValueError):
            P.apply_pruning(trained_desk_model, "fc1", res)

    def test_non_dense_layer_rejected(self, trained_desk_model, desk_split):
        train, _ = desk_split
        with pytest.raises(ValueError):
            P.collect_layer_activations(trained_desk_model, train, "conv1")
        with pytest.raises(ValueError):
            P.collect_layer_activations(trained_desk_model, train, "fc2")  # no ReLU

    def test_stratified_probe_balance(self, desk_dataset):
        probe = P._stratified_probe(desk_dataset, 100, 0)
        counts = np.bincount([f.label for f in probe.frames], minlength=4)
        assert len(probe) == 100
        assert counts.min() >= 25
