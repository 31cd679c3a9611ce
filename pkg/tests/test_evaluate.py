import numpy as np
import pytest

from vistad.detections import Detections
from vistad.evaluate import (
    Counts,
    aggregate,
    alpha_key,
    contextual_counts,
    evaluate_detection_sets,
    evaluate_score_series,
    gt_based_counts,
    prf,
    render_report_table,
)


class TestContextualCounts:
    def test_hand_worked_mixed_case(self):
        c = contextual_counts([(0, 5), (10, 12)], [(4, 8)])
        assert (c.tp, c.fp, c.fn) == (1, 1, 0)

    def test_empty_prediction(self):
        c = contextual_counts([], [(3, 4)])
        assert (c.tp, c.fp, c.fn) == (0, 0, 1)

    def test_point_anomaly_shared_index(self):
        c = contextual_counts([(2, 2)], [(2, 2)])
        assert (c.tp, c.fp, c.fn) == (1, 0, 0)

    def test_touching_but_not_overlapping_is_no_match(self):
        # no padding: intervals must share an index, adjacency is not enough
        c = contextual_counts([(0, 4)], [(5, 9)])
        assert (c.tp, c.fp, c.fn) == (0, 1, 1)

    def test_one_prediction_covering_two_truths(self):
        c = contextual_counts([(0, 20)], [(2, 3), (10, 12)])
        assert (c.tp, c.fp, c.fn) == (1, 0, 0)

    def test_two_predictions_on_one_truth(self):
        c = contextual_counts([(2, 4), (6, 8)], [(0, 10)])
        assert (c.tp, c.fp, c.fn) == (2, 0, 0)

    def test_merging_predictions_on_same_truth_drops_tp_by_one(self):
        before = contextual_counts([(2, 4), (6, 8)], [(0, 10)])
        after = contextual_counts([(2, 8)], [(0, 10)])
        assert before.tp - after.tp == 1
        assert before.fp == after.fp == 0

    def test_tp_plus_fp_equals_prediction_count(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            pred = sorted(
                (int(s), int(s + rng.integers(0, 5))) for s in rng.integers(0, 90, rng.integers(0, 6))
            )
            gt = sorted(
                (int(s), int(s + rng.integers(0, 5))) for s in rng.integers(0, 90, rng.integers(0, 4))
            )
            c = contextual_counts(pred, gt)
            assert c.tp + c.fp == len(pred)
            assert c.fn <= len(gt)

    def test_swapping_pred_and_gt_recomputes_roles(self):
        pred, gt = [(0, 5), (10, 12)], [(4, 8)]
        swapped = contextual_counts(gt, pred)
        assert (swapped.tp, swapped.fp, swapped.fn) == (1, 0, 1)

    def test_gt_based_variant(self):
        c = gt_based_counts([(0, 20)], [(2, 3), (10, 12)])
        assert (c.tp, c.fp, c.fn) == (2, 0, 0)


class TestPrf:
    def test_two_thirds_case(self):
        p, r, f1 = prf(Counts(1, 1, 0))
        assert (p, r) == (0.5, 1.0)
        assert f1 == pytest.approx(2.0 / 3.0)

    def test_all_zero_convention(self):
        assert prf(Counts(0, 0, 0)) == (0.0, 0.0, 0.0)

    def test_perfect_precision_half_recall(self):
        p, r, f1 = prf(Counts(2, 0, 2))
        assert (p, r) == (1.0, 0.5)
        assert f1 == pytest.approx(2.0 / 3.0)


class TestEvaluateScoreSeries:
    def test_separable_series_reaches_f1_one(self):
        score = np.zeros(500)
        score[100:110] = 5.0
        result = evaluate_score_series(score, [(100, 109)], [0.10, 0.01, 0.001])
        assert result["f1_max"] == pytest.approx(1.0)

    def test_constant_score_yields_zero_everywhere(self):
        result = evaluate_score_series(np.full(100, 0.3), [(10, 20)], [0.10, 0.01])
        assert result["f1_max"] == 0.0
        for row in result["per_alpha"].values():
            assert row["f1"] == 0.0

    def test_sweep_equals_max_of_single_alpha_runs(self):
        rng = np.random.default_rng(1)
        score = rng.standard_normal(400)
        score[50:60] += 4.0
        gt = [(50, 59)]
        alphas = [0.10, 0.01, 0.001]
        combined = evaluate_score_series(score, gt, alphas)
        singles = [evaluate_score_series(score, gt, [a]) for a in alphas]
        assert combined["f1_max"] == pytest.approx(max(s["f1_max"] for s in singles))
        for a, single in zip(alphas, singles):
            assert combined["per_alpha"][alpha_key(a)]["f1"] == pytest.approx(
                single["per_alpha"][alpha_key(a)]["f1"]
            )

    def test_smoothing_applied_before_thresholding(self):
        rng = np.random.default_rng(2)
        score = rng.standard_normal(300)
        score[100:105] += 6.0
        raw = evaluate_score_series(score, [(100, 104)], [0.01])
        smoothed = evaluate_score_series(score, [(100, 104)], [0.01], ewma_span=10)
        k = alpha_key(0.01)
        assert raw["per_alpha"][k]["tau"] != smoothed["per_alpha"][k]["tau"]

    def test_f1_max_bounds_each_alpha(self):
        rng = np.random.default_rng(3)
        score = rng.standard_normal(400)
        result = evaluate_score_series(score, [(100, 120)], [0.10, 0.01, 0.001])
        for row in result["per_alpha"].values():
            assert result["f1_max"] >= row["f1"]


class TestEvaluateDetectionSets:
    def test_single_operating_point(self):
        sets = {"0.01": Detections([(5, 9)])}
        result = evaluate_detection_sets(sets, [(7, 12)])
        assert result["per_alpha"]["0.01"]["f1"] == pytest.approx(1.0)
        assert result["f1_max"] == pytest.approx(1.0)


class TestAggregate:
    def row(self, dataset, tp, fp, fn, akey="0.01"):
        p, r, f1 = prf(Counts(tp, fp, fn))
        return {
            "dataset": dataset,
            "series_id": f"{dataset}-{tp}{fp}{fn}",
            "per_alpha": {akey: {"tp": tp, "fp": fp, "fn": fn, "precision": p, "recall": r, "f1": f1}},
        }

    def test_pooled_counts_before_prf(self):
        report = aggregate([self.row("d", 1, 0, 0), self.row("d", 0, 1, 1)])
        cell = report["datasets"]["d"]["per_alpha"]["0.01"]
        assert (cell["tp"], cell["fp"], cell["fn"]) == (1, 1, 1)
        assert cell["f1"] == pytest.approx(0.5)
        assert report["datasets"]["d"]["f1_max"] == pytest.approx(0.5)

    def test_single_series_aggregate_equals_itself(self):
        report = aggregate([self.row("d", 2, 1, 1)])
        cell = report["datasets"]["d"]["per_alpha"]["0.01"]
        p, r, f1 = prf(Counts(2, 1, 1))
        assert cell["f1"] == pytest.approx(f1)

    def test_summary_mean_across_datasets(self):
        report = aggregate(
            [self.row("a", 1, 1, 0), self.row("b", 1, 0, 1)]
        )
        f1a = report["datasets"]["a"]["f1_max"]
        f1b = report["datasets"]["b"]["f1_max"]
        assert report["summary"]["f1_max_mean"] == pytest.approx((f1a + f1b) / 2)

    def test_table_renders_all_datasets(self):
        report = aggregate([self.row("a", 1, 1, 0), self.row("b", 1, 0, 1)])
        table = render_report_table(report)
        assert "a" in table and "b" in table
        assert "F1-max" in table
        assert "mean+/-std" in table
