import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlrm.core_metrics import MetricValue
from mlrm.errors import DivergenceDetected, IncomparableSubmodules, InvalidSize, NotFound
from mlrm.model_kit import (
    ModelConfig,
    MlpSpec,
    ParamVector,
    PruneMask,
    Submodule,
    apply_mask,
    capacity_search,
    cross_entropy,
    evaluate_model,
    init_params,
    l1_prune_search,
    load_params,
    loss_and_grad,
    magnitude_mask,
    majority_vote,
    overparam_redundancy,
    param_layout,
    save_params,
    stratified_split,
    submodular_perf_redundancy,
    submodule_param_distance,
    train_mlp,
)


def blobs(seed, n=2000, d=2, sep=2.0, sd=0.5):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    centers = np.zeros((2, d))
    centers[:, 0] = [-sep, sep]
    return centers[y] + rng.standard_normal((n, d)) * sd, y


def xor_data(seed, reps=50):
    rng = np.random.default_rng(seed)
    x = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * reps, float) + rng.normal(0, 0.05, (4 * reps, 2))
    y = np.array([0, 1, 1, 0] * reps)
    return x, y


def numeric_grad(params, spec, x, y, h=1e-5):
    g = np.zeros_like(params.values)
    for i in range(params.values.size):
        p = params.copy()
        p.values[i] += h
        up = cross_entropy(p, spec, x, y)
        p.values[i] -= 2 * h
        down = cross_entropy(p, spec, x, y)
        g[i] = (up - down) / (2 * h)
    return g


class TestLayout:
    def test_weights_then_biases(self):
        spec = MlpSpec((4, 6, 3))
        layout = param_layout(spec.layer_sizes)
        assert layout.tolist() == [0, 24, 42, 48, 51]
        assert spec.n_params == 51
        assert np.all(np.diff(layout) > 0)
        p = init_params(spec)
        assert p.weight_flags().sum() == 42
        ws, bs = p.unpack(spec)
        assert [w.shape for w in ws] == [(4, 6), (6, 3)]
        assert all(np.all(b == 0) for b in bs)

    def test_init_bounds(self):
        spec = MlpSpec((10, 30, 2), seed=3)
        ws, _ = init_params(spec).unpack(spec)
        assert np.abs(ws[0]).max() <= np.sqrt(6 / 40)
        assert np.abs(ws[1]).max() <= np.sqrt(6 / 32)


class TestGradients:
    def test_tanh_matches_central_differences(self):
        spec = MlpSpec((4, 6, 3), activation="tanh", seed=7)
        rng = np.random.default_rng(0)
        params = init_params(spec)
        params.values += rng.normal(0, 0.1, params.values.size)  # nonzero biases too
        x = rng.standard_normal((5, 4))
        y = np.array([0, 1, 2, 1, 0])
        _, analytic = loss_and_grad(params, spec, x, y)
        numeric = numeric_grad(params, spec, x, y)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
        assert rel.max() <= 1e-4

    def test_relu_away_from_kink(self):
        spec = MlpSpec((3, 5, 2), activation="relu", seed=1)
        rng = np.random.default_rng(1)
        params = init_params(spec)
        x = rng.standard_normal((5, 3))
        y = np.array([0, 1, 1, 0, 1])
        ws, bs = params.unpack(spec)
        assert np.abs(x @ ws[0] + bs[0]).min() > 1e-3
        _, analytic = loss_and_grad(params, spec, x, y)
        numeric = numeric_grad(params, spec, x, y)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
        assert rel.max() <= 1e-4


class TestTraining:
    def test_separable_blobs(self):
        x, y = blobs(0, n=400)
        spec = MlpSpec((2, 8, 2), epochs=30)
        params, log = train_mlp(spec, x, y)
        assert evaluate_model(params, spec, x, y).value >= 0.99
        assert log.final_loss < log.initial_loss

    def test_zero_learning_rate_keeps_init(self):
        x, y = blobs(1, n=50)
        spec = MlpSpec((2, 4, 2), epochs=1, learning_rate=0.0, seed=5)
        params, _ = train_mlp(spec, x, y)
        np.testing.assert_array_equal(params.values, init_params(spec).values)

    def test_xor_majority_of_seeds(self):
        passed = 0
        for seed in range(3):
            x, y = xor_data(seed)
            spec = MlpSpec((2, 8, 2), activation="relu", seed=seed, epochs=300, learning_rate=0.1)
            params, _ = train_mlp(spec, x, y)
            passed += evaluate_model(params, spec, x, y).value >= 0.95
        assert passed >= 2

    def test_bitwise_determinism(self):
        x, y = blobs(2, n=300)
        spec = MlpSpec((2, 16, 2), seed=11, epochs=5)
        a, _ = train_mlp(spec, x, y)
        b, _ = train_mlp(spec, x, y)
        assert a.values.tobytes() == b.values.tobytes()

    def test_divergence(self):
        x, y = blobs(3, n=100)
        x = x * 1e150
        spec = MlpSpec((2, 8, 2), epochs=3, learning_rate=10.0)
        with pytest.raises(DivergenceDetected):
            train_mlp(spec, x, y)


class TestEvaluate:
    def test_zero_network_is_constant_predictor(self):
        spec = MlpSpec((2, 4, 3))
        x = np.random.default_rng(0).standard_normal((90, 2))
        y = np.repeat([0, 1, 2], 30)
        assert evaluate_model(ParamVector.zeros(spec), spec, x, y).value == pytest.approx(1 / 3)

    def test_huge_bias_forces_class(self):
        spec = MlpSpec((2, 4, 3), seed=1)
        p = init_params(spec)
        _, bs = p.unpack(spec)
        bs[-1][2] = 1e6
        x = np.random.default_rng(0).standard_normal((20, 2))
        from mlrm.model_kit import predict
        assert np.all(predict(p, spec, x) == 2)

    def test_mask_equals_zeroing(self):
        x, y = blobs(4, n=200)
        spec = MlpSpec((2, 8, 2), epochs=5)
        params, _ = train_mlp(spec, x, y)
        mask = magnitude_mask(params, 10)
        zeroed = params.copy()
        zeroed.values[~mask.keep] = 0.0
        assert evaluate_model(params, spec, x, y, mask).value == evaluate_model(zeroed, spec, x, y).value


class TestPruning:
    def test_equal_accuracy_is_fully_redundant(self):
        s = overparam_redundancy(0.981, 0.981, "removed")
        assert s.r == 1.0

    def test_exact_zero_weights_prune_for_free(self):
        x, y = blobs(5, n=300)
        spec = MlpSpec((2, 16, 2), epochs=10)
        params, _ = train_mlp(spec, x, y)
        w = np.flatnonzero(params.weight_flags())
        params.values[w[::2]] = 0.0
        res = l1_prune_search(params, spec, x, y, step=0.01, tol=0.0)
        n_w = w.size
        assert res.sparsity >= 0.5 * n_w / params.n_params - 1e-12
        assert np.all(res.mask.keep[~params.weight_flags()])  # biases kept

    def test_overparameterized_blobs(self):
        x, y = blobs(0)
        tr, va, _ = stratified_split(y, seed=0)
        spec = MlpSpec((2, 64, 2), epochs=30)
        params, _ = train_mlp(spec, x[tr], y[tr])
        res = l1_prune_search(params, spec, x[va], y[va], step=0.01, tol=0.01)
        assert res.sparsity >= 0.70
        assert res.pruned.value >= res.baseline.value - 0.01
        # oracle: a tiny network trained from scratch already solves the task
        small = MlpSpec((2, 2, 2), epochs=30)
        sp, _ = train_mlp(small, x[tr], y[tr])
        assert evaluate_model(sp, small, x[va], y[va]).value >= res.baseline.value - 0.01

    def test_sweep_is_maximal(self):
        x, y = blobs(6, n=600, sd=1.2)
        tr, va, _ = stratified_split(y, seed=1)
        spec = MlpSpec((2, 32, 2), epochs=20)
        params, _ = train_mlp(spec, x[tr], y[tr])
        res = l1_prune_search(params, spec, x[va], y[va], step=0.02, tol=0.0)
        assert res.pruned.value >= res.baseline.value
        passing = [c["fraction"] for c in res.curve if c["ok"]]
        if passing:
            best = max(passing)
            later = [c for c in res.curve if c["fraction"] > best]
            assert all(not c["ok"] for c in later)
            n_w = params.weight_flags().sum()
            assert res.mask.n_pruned == int(round(best * n_w))

    def test_step_validation(self):
        spec = MlpSpec((2, 2, 2))
        with pytest.raises(ValueError):
            l1_prune_search(init_params(spec), spec, np.zeros((2, 2)), np.array([0, 1]), step=0.1)


class TestOverparamRedundancy:
    def test_added(self):
        assert overparam_redundancy(0.8, 0.9, "added").r == pytest.approx(0.875)

    def test_removed_hurts(self):
        s = overparam_redundancy(0.9, 0.8, "removed")
        assert s.r == pytest.approx(1 - 0.1 / 0.9)
        assert s.r < 1

    @given(st.floats(0.01, 1.0))
    def test_identity(self, a):
        assert overparam_redundancy(MetricValue.higher(a), MetricValue.higher(a), "removed").r == 1.0


def four_blobs(seed, n=800):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 4
    angles = y * np.pi / 2
    centers = np.column_stack([np.cos(angles), np.sin(angles)]) * 3
    return centers[y] + rng.standard_normal((n, 2)) * 0.4, y


class TestCapacitySearch:
    def test_four_blobs(self):
        x, y = four_blobs(0)
        cfg = ModelConfig(hidden=(8,), epochs=40)
        res = capacity_search(x, y, [1, 2, 4, 8, 16], cfg, tol=0.01, seed=0)
        assert res.chosen <= 8
        # oracle: width 1 cannot separate four classes as well as the widest net
        assert res.accuracies[1] < res.accuracies[16] - 0.01

    def test_single_width(self):
        x, y = four_blobs(1, n=200)
        assert capacity_search(x, y, [5], ModelConfig(epochs=5)).chosen == 5

    def test_vacuous_tolerance(self):
        x, y = four_blobs(2, n=200)
        assert capacity_search(x, y, [1, 2, 4], ModelConfig(epochs=5), tol=1.0).chosen == 1

    def test_unsorted(self):
        with pytest.raises(InvalidSize):
            capacity_search(np.zeros((10, 2)), np.zeros(10, int), [4, 2])


def constant_member(mid, cls, n_in=2, n_classes=2):
    spec = MlpSpec((n_in, 2, n_classes))
    p = ParamVector.zeros(spec)
    _, bs = p.unpack(spec)
    bs[-1][cls] = 10.0
    return Submodule(mid, p, spec)


class TestSubmodules:
    def setup_method(self):
        self.x, self.y = blobs(7, n=400)
        spec = MlpSpec((2, 8, 2), epochs=20)
        params, _ = train_mlp(spec, self.x, self.y)
        self.good = Submodule("good", params, spec)

    def test_identical_members(self):
        ens = [Submodule(str(i), self.good.params.copy(), self.good.spec) for i in range(3)]
        res = submodular_perf_redundancy(ens, "1", self.x, self.y)
        assert res.score.r == 1.0
        assert res.raw_drop == 0.0

    def test_only_accurate_member(self):
        ens = [self.good, constant_member("zero", 0), constant_member("one", 1)]
        res = submodular_perf_redundancy(ens, "good", self.x, self.y)
        assert res.full.value >= 0.99
        assert res.reduced.value == 0.5
        assert res.score.r < 1
        assert res.raw_drop == pytest.approx(1 - res.score.r, abs=1e-9)

    def test_missing_id(self):
        with pytest.raises(NotFound):
            submodular_perf_redundancy([self.good, constant_member("z", 0)], "nope", self.x, self.y)

    def test_vote_ties_go_low(self):
        assert majority_vote([[1, 0, 2], [0, 1, 1]], 3).tolist() == [0, 0, 1]

    def test_param_distance(self):
        assert submodule_param_distance(self.good, self.good) == 0.0
        other = Submodule("o", self.good.params.copy(), self.good.spec)
        other.params.values[3] += 3.0
        assert submodule_param_distance(self.good, other) == pytest.approx(3.0)

    def test_two_seeds_differ(self):
        spec2 = MlpSpec((2, 8, 2), epochs=20, seed=1)
        p2, _ = train_mlp(spec2, self.x, self.y)
        m2 = Submodule("s1", p2, spec2)
        assert evaluate_model(p2, spec2, self.x, self.y).value == pytest.approx(
            evaluate_model(self.good.params, self.good.spec, self.x, self.y).value, abs=0.02)
        assert submodule_param_distance(self.good, m2) > 0

    def test_incomparable(self):
        with pytest.raises(IncomparableSubmodules):
            submodule_param_distance(self.good, constant_member("c", 0, n_in=3))

    @settings(max_examples=30)
    @given(st.integers(0, 10_000))
    def test_metric_axioms(self, seed):
        rng = np.random.default_rng(seed)
        spec = MlpSpec((3, 4, 2))
        ms = [Submodule(str(i), ParamVector(rng.standard_normal(spec.n_params), param_layout(spec.layer_sizes)), spec)
              for i in range(3)]
        d = submodule_param_distance
        for a, b in itertools.permutations(ms, 2):
            assert d(a, b) == d(b, a)
        a, b, c = ms
        assert d(a, c) <= d(a, b) + d(b, c) + 1e-12


class TestSplitAndSerialization:
    def test_split_ratios(self):
        y = np.array([0] * 3260 + [1] * 1585)
        tr, va, te = stratified_split(y, seed=0)
        assert len(tr) + len(va) + len(te) == y.size
        assert len(set(tr) | set(va) | set(te)) == y.size
        assert abs(len(tr) / y.size - 0.8) < 0.01
        assert abs(len(va) / y.size - 0.1) < 0.01
        np.testing.assert_array_equal(stratified_split(y, seed=0)[1], va)

    def test_mlpk_round_trip(self, tmp_path):
        spec = MlpSpec((3, 5, 2), activation="tanh", seed=9)
        p = init_params(spec)
        path = tmp_path / "m.mlpk"
        save_params(path, p, spec)
        q, spec2 = load_params(path)
        assert q.values.tobytes() == p.values.tobytes()
        assert spec2.layer_sizes == spec.layer_sizes and spec2.activation == "tanh"
        assert q.layout.tolist() == p.layout.tolist()

    def test_mask_sparsity(self):
        m = PruneMask(np.array([True, False, False, True]))
        assert m.sparsity == 0.5
        p = ParamVector(np.arange(4.0), np.array([0, 4]))
        assert apply_mask(p, m).values.tolist() == [0.0, 0.0, 0.0, 3.0]
