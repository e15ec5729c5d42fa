import numpy as np
import pytest

from groupsbl.metrics import grouping_accuracy, nmse, support_f1


class TestNmse:
    def test_perfect_estimate_is_zero(self, rng):
        truth = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
        assert nmse(truth.copy(), truth) == 0.0

    def test_zero_estimate_is_one(self, rng):
        truth = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
        assert nmse(np.zeros_like(truth), truth) == pytest.approx(1.0)

    def test_doubled_truth_is_one(self, rng):
        truth = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
        assert nmse(2.0 * truth, truth) == pytest.approx(1.0)

    def test_zero_energy_truth_rejected(self):
        with pytest.raises(ValueError):
            nmse(np.ones((1, 2)), np.zeros((1, 2)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            nmse(np.ones((1, 2)), np.ones((2, 2)))


class TestGroupingAccuracy:
    def test_identical_up_to_permutation(self):
        assert grouping_accuracy([1, 1, 2, 2], [2, 2, 1, 1]) == 1.0

    def test_exact_match(self):
        assert grouping_accuracy([1, 2, 1, 2], [1, 2, 1, 2]) == 1.0

    def test_half_right_under_best_permutation(self):
        # exhaustive check: [1,2,1,2] vs [1,1,2,2] scores 2/4 either way
        assert grouping_accuracy([1, 2, 1, 2], [1, 1, 2, 2]) == 0.5

    def test_rectangular_label_sets(self):
        # assigned uses 3 labels, truth only 2
        acc = grouping_accuracy([1, 2, 3, 3], [1, 1, 2, 2])
        assert acc == pytest.approx(0.75)

    def test_matches_exhaustive_on_random_instances(self, rng):
        from itertools import permutations
        for _ in range(25):
            truth = rng.integers(1, 4, size=9)
            assigned = rng.integers(1, 4, size=9)
            fast = grouping_accuracy(assigned, truth)
            labels = sorted(set(assigned) | set(truth))
            best = 0
            for perm in permutations(labels):
                relabel = {a: p for a, p in zip(labels, perm)}
                best = max(best, sum(relabel[a] == t
                                     for a, t in zip(assigned, truth)))
            assert fast == pytest.approx(best / 9)

    def test_large_label_count_uses_hungarian(self, rng):
        truth = rng.integers(1, 11, size=40)
        assigned = truth.copy()
        assert grouping_accuracy(assigned, truth) == 1.0


class TestSupportF1:
    def test_exact_sets(self):
        assert support_f1([1, 2, 3], [3, 2, 1]) == 1.0

    def test_disjoint_sets(self):
        assert support_f1([1, 2], [3, 4]) == 0.0

    def test_partial_overlap(self):
        # two hits, sizes 3 and 2: f1 = 2*2/(3+2)
        assert support_f1([1, 2, 3], [2, 3]) == pytest.approx(0.8)

    def test_both_empty(self):
        assert support_f1([], []) == 1.0

    def test_one_empty(self):
        assert support_f1([], [1]) == 0.0
