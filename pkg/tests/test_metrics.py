"""Accuracy and stream-summary metrics."""

import numpy as np
import pytest

from latentreplay.errors import DataError
from latentreplay.metrics import MetricRecord, MetricsLog, aoc, last, top_k_accuracy

# per-step top-1 columns whose published means are 83.1 and 80.7
ICARL_STEPS = [99.3, 97.2, 93.5, 91.0, 87.5, 82.1, 77.1, 72.8, 67.1, 63.5]
REMIND_STEPS = [98.4, 91.6, 87.1, 82.2, 79.7, 77.7, 74.8, 72.8, 72.2, 70.9]


def topk_reference(logits, labels, k):
    """Full-sort oracle with explicit lowest-index tie handling."""
    hits = 0
    for row, label in zip(logits, labels):
        ranked = sorted(range(len(row)), key=lambda j: (-row[j], j))
        hits += label in ranked[:k]
    return hits / len(labels)


class TestTopK:
    def test_perfect_logits(self):
        logits = np.eye(4) * 10
        assert top_k_accuracy(logits, np.arange(4), 1) == 1.0

    def test_k_equal_class_count_is_always_one(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(8, 5))
        labels = rng.integers(0, 5, size=8)
        assert top_k_accuracy(logits, labels, 5) == 1.0

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_sort_oracle(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(16, 6))
        labels = rng.integers(0, 6, size=16)
        for k in (1, 2, 3, 6):
            assert top_k_accuracy(logits, labels, k) == topk_reference(logits, labels, k)

    def test_ties_break_to_lowest_index(self):
        logits = np.zeros((1, 4))
        # all logits equal: rank is 0,1,2,3; only class 0 is in the top 1
        assert top_k_accuracy(logits, np.array([0]), 1) == 1.0
        assert top_k_accuracy(logits, np.array([1]), 1) == 0.0
        assert top_k_accuracy(logits, np.array([1]), 2) == 1.0

    def test_monotone_in_k(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(12, 5))
        labels = rng.integers(0, 5, size=12)
        accs = [top_k_accuracy(logits, labels, k) for k in range(1, 6)]
        assert all(a <= b for a, b in zip(accs, accs[1:]))

    def test_empty_batch_rejected(self):
        with pytest.raises(DataError):
            top_k_accuracy(np.zeros((0, 3)), np.zeros(0, dtype=int), 1)

    def test_k_out_of_range_rejected(self):
        with pytest.raises(DataError):
            top_k_accuracy(np.zeros((2, 3)), np.zeros(2, dtype=int), 4)


class TestAoc:
    def test_published_step_columns(self):
        assert abs(aoc(ICARL_STEPS) - 83.11) < 0.005
        assert abs(aoc(REMIND_STEPS) - 80.74) < 0.005
        assert f"{aoc(ICARL_STEPS):.1f}" == "83.1"
        assert f"{aoc(REMIND_STEPS):.1f}" == "80.7"

    def test_single_entry(self):
        assert aoc([42.0]) == 42.0

    def test_constant_sequence(self):
        assert aoc([7.5] * 9) == 7.5

    def test_order_invariant(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(0, 100, size=12).tolist()
        shuffled = list(values)
        rng.shuffle(shuffled)
        assert abs(aoc(values) - aoc(shuffled)) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            aoc([])


class TestLast:
    def test_single_record_identity(self):
        assert last([5.0]) == 5.0

    def test_final_element(self):
        assert last(ICARL_STEPS) == 63.5

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            last([])


class TestMetricsLog:
    def test_aoc_and_last_use_boundary_records_only(self):
        log = MetricsLog()
        log.add(MetricRecord(step=0, task=1, seen_classes=2, top1=0.9))
        log.add(MetricRecord(step=5, task=2, seen_classes=4, top1=0.1, boundary=False))
        log.add(MetricRecord(step=10, task=2, seen_classes=4, top1=0.7))
        assert log.boundary_top1() == [0.9, 0.7]
        assert abs(log.aoc() - 0.8) < 1e-12
        assert log.last() == 0.7
