import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlrm.core_metrics import (
    EQUAL_WIDTH,
    QUANTILE,
    Direction,
    Histogram,
    Interpretation,
    MetricValue,
    balanced_accuracy,
    conditional_mutual_information,
    joint_entropy,
    mutual_information,
    pairwise_distance,
    quantize_features,
    redundancy_index,
    relative_redundancy,
    removal_redundancy,
    shannon_entropy,
)
from mlrm.errors import (
    DegenerateLabels,
    DirectionMismatch,
    DivisionByZero,
    EmptyInput,
    InvalidBins,
    InvalidMetric,
    ShapeMismatch,
)

H = MetricValue.higher
L = MetricValue.lower


def entropy_oracle(probs):
    return -sum(p * math.log2(p) for p in probs if p > 0)


class TestRedundancyIndex:
    def test_fusion_vs_single_modality(self):
        s = redundancy_index(H(0.981), H(0.973), epsilon=1e-12)
        assert s.r == pytest.approx(1.0082, abs=1e-3)
        assert s.interpretation is Interpretation.FULLY_REDUNDANT_HARMFUL

    def test_equal_is_exactly_one(self):
        s = redundancy_index(H(0.981), H(0.981))
        assert s.r == 1.0
        assert s.interpretation is Interpretation.FULLY_REDUNDANT_NEUTRAL

    def test_doubling_gives_zero(self):
        s = redundancy_index(H(0.5), H(1.0), epsilon=1e-12)
        assert s.r == pytest.approx(0.0, abs=1e-9)
        assert s.interpretation is Interpretation.NOT_FULLY_REDUNDANT

    def test_lower_is_better_flips(self):
        # MSE falls from 2 to 1: improvement, not redundant
        assert redundancy_index(L(2.0), L(1.0)).r == pytest.approx(0.5)
        assert redundancy_index(L(2.0), L(3.0)).r == pytest.approx(1.5)

    def test_errors(self):
        with pytest.raises(DirectionMismatch):
            redundancy_index(H(1.0), L(1.0))
        with pytest.raises(InvalidMetric):
            redundancy_index(H(float("nan")), H(1.0))
        with pytest.raises(InvalidMetric):
            MetricValue(float("inf"), Direction.HIGHER_IS_BETTER)
        with pytest.raises(InvalidMetric):
            redundancy_index(H(1.0), H(1.0), epsilon=0.0)

    @given(
        st.floats(-1e3, 1e3, allow_nan=False),
        st.floats(1e-6, 1.0),
    )
    def test_identity_for_any_epsilon(self, p, eps):
        assert redundancy_index(H(p), H(p), epsilon=eps).r == 1.0
        assert redundancy_index(L(p), L(p), epsilon=eps).r == 1.0

    @given(
        st.floats(0.01, 100),
        st.floats(-100, 100),
        st.floats(0.001, 10),
    )
    def test_monotone_in_after(self, before, after, delta):
        hi = redundancy_index(H(before), H(after + delta)).r
        lo = redundancy_index(H(before), H(after)).r
        assert hi < lo
        assert redundancy_index(L(before), L(after + delta)).r > redundancy_index(L(before), L(after)).r

    def test_removal_form(self):
        assert removal_redundancy(H(0.981), H(0.981)).r == 1.0
        assert removal_redundancy(H(0.9), H(0.8)).r == pytest.approx(1 - 0.1 / 0.9)


class TestRelativeRedundancy:
    def test_values(self):
        assert relative_redundancy(0.5, 0.5) == 1.0
        # oracle: the counts themselves
        assert relative_redundancy(3260 / 4845, 1585 / 4845) == pytest.approx(3260 / 1585)
        assert relative_redundancy(0.6728, 0.3272) == pytest.approx(2.057, abs=1e-3)
        assert relative_redundancy(0.0, 0.3) == 0.0

    def test_zero_reference(self):
        with pytest.raises(DivisionByZero):
            relative_redundancy(0.3, 0.0)


class TestEntropy:
    def test_uniform(self):
        assert shannon_entropy([5, 5, 5, 5]) == pytest.approx(2.0)

    def test_deterministic(self):
        assert shannon_entropy(Histogram.from_counts([0, 9, 0])) == 0.0

    def test_three_to_one(self):
        assert shannon_entropy([3, 1]) == pytest.approx(entropy_oracle([0.75, 0.25]))
        assert shannon_entropy([3, 1]) == pytest.approx(0.8113, abs=1e-4)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            shannon_entropy([0, 0])
        with pytest.raises(EmptyInput):
            shannon_entropy([])

    @given(st.lists(st.integers(0, 50), min_size=1, max_size=20).filter(lambda c: sum(c) > 0), st.randoms())
    def test_permutation_invariant_and_bounded(self, counts, rnd):
        h = shannon_entropy(counts)
        shuffled = list(counts)
        rnd.shuffle(shuffled)
        assert shannon_entropy(shuffled) == h
        nonempty = sum(1 for c in counts if c > 0)
        assert 0.0 <= h <= math.log2(nonempty) + 1e-12


class TestQuantize:
    def test_equal_width_midpoint(self):
        codes = quantize_features(np.array([0.0, 1, 2, 3]), 2, EQUAL_WIDTH)
        assert codes[:, 0].tolist() == [0, 0, 1, 1]

    @pytest.mark.parametrize("scheme", [EQUAL_WIDTH, QUANTILE])
    def test_constant_column(self, scheme):
        codes = quantize_features(np.full((7, 1), 3.3), 5, scheme)
        assert np.all(codes == 0)

    def test_quantile_balance(self):
        x = np.random.default_rng(0).standard_normal(1000)
        codes = quantize_features(x, 4, QUANTILE)[:, 0]
        # oracle: empirical quartiles
        q = np.quantile(x, [0.25, 0.5, 0.75])
        oracle = np.searchsorted(q, x, side="left")
        freq = np.bincount(codes, minlength=4) / 1000
        assert np.all((freq >= 0.23) & (freq <= 0.27))
        assert np.mean(codes == oracle) > 0.99

    def test_quantile_ties_go_low(self):
        codes = quantize_features(np.array([1.0, 1, 1, 1, 2, 3]), 2, QUANTILE)[:, 0]
        assert codes.tolist() == [0, 0, 0, 0, 1, 1]

    def test_codes_in_range(self):
        x = np.random.default_rng(1).standard_normal((200, 3))
        for scheme in (EQUAL_WIDTH, QUANTILE):
            c = quantize_features(x, 6, scheme)
            assert c.min() >= 0 and c.max() < 6

    def test_invalid_bins(self):
        with pytest.raises(InvalidBins):
            quantize_features(np.arange(4.0), 1)


class TestMutualInformation:
    def test_self_information(self):
        f = np.array([0, 1] * 50)
        assert mutual_information(f, f) == pytest.approx(1.0)

    def test_bijection(self):
        f = np.random.default_rng(2).integers(0, 2, 500)
        assert mutual_information(f, 1 - f) == pytest.approx(joint_entropy(f))

    def test_independent_vs_permutation_null(self):
        rng = np.random.default_rng(3)
        a = rng.integers(0, 8, 10_000)
        b = rng.integers(0, 8, 10_000)
        mi = mutual_information(a, b)
        null = [mutual_information(a, rng.permutation(b)) for _ in range(20)]
        assert mi <= 0.01
        assert mi <= max(null) + 0.005

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            mutual_information(np.zeros(3, int), np.zeros(4, int))

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 3)), min_size=1, max_size=80))
    def test_symmetry_and_bounds(self, pairs):
        a = np.array([p[0] for p in pairs])
        b = np.array([p[1] for p in pairs])
        i_ab = mutual_information(a, b)
        assert i_ab == mutual_information(b, a)
        assert 0.0 <= i_ab <= min(joint_entropy(a), joint_entropy(b)) + 1e-9


class TestConditionalMI:
    def test_empty_conditioning_reduces_to_mi(self):
        rng = np.random.default_rng(4)
        a = rng.integers(0, 3, 300)
        y = (a + rng.integers(0, 2, 300)) % 3
        assert abs(conditional_mutual_information(a, y, None) - mutual_information(a, y)) <= 1e-12
        empty = np.zeros((300, 0), dtype=int)
        assert abs(conditional_mutual_information(a, y, empty) - mutual_information(a, y)) <= 1e-12

    def test_xor(self):
        # all four (f, g) combinations equally often
        f = np.array([0, 0, 1, 1] * 256)
        g = np.array([0, 1, 0, 1] * 256)
        y = f ^ g
        assert mutual_information(f, y) == pytest.approx(0.0, abs=1e-9)
        assert conditional_mutual_information(f, y, g) == pytest.approx(1.0, abs=1e-9)

    def test_copy_in_given(self):
        rng = np.random.default_rng(5)
        f = rng.integers(0, 4, 400)
        y = rng.integers(0, 2, 400)
        other = rng.integers(0, 3, 400)
        given = np.column_stack([other, f])
        assert conditional_mutual_information(f, y, given) == pytest.approx(0.0, abs=1e-9)


class TestBalancedAccuracy:
    def test_perfect(self):
        y = np.array([0, 1, 2, 1])
        assert balanced_accuracy(y, y).value == 1.0

    def test_constant_prediction(self):
        assert balanced_accuracy([0, 0, 1, 1], [0, 0, 0, 0]).value == 0.5

    def test_hand_example(self):
        v = balanced_accuracy([0, 0, 1, 1, 1], [0, 1, 1, 1, 0])
        assert v.value == pytest.approx((1 / 2 + 2 / 3) / 2)
        assert v.direction is Direction.HIGHER_IS_BETTER

    def test_missing_class(self):
        with pytest.raises(DegenerateLabels):
            balanced_accuracy([0, 0], [0, 1], n_classes=2)

    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=40), st.permutations([0, 1, 2]))
    def test_relabel_invariant(self, pairs, perm):
        t = np.array([p[0] for p in pairs])
        p = np.array([q[1] for q in pairs])
        perm = np.array(perm)
        assert balanced_accuracy(t, p).value == pytest.approx(balanced_accuracy(perm[t], perm[p]).value)


class TestPairwiseDistance:
    def test_values(self):
        assert pairwise_distance([1, 2], [1, 2]) == 0.0
        assert pairwise_distance([0, 0], [3, 4]) == 5.0
        assert pairwise_distance([0, 0], [3, 4], "manhattan") == 7.0

    def test_shape(self):
        with pytest.raises(ShapeMismatch):
            pairwise_distance([0, 0], [1, 2, 3])
