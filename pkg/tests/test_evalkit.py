"""IoU, matching, and average precision against brute-force oracles."""

import itertools

import numpy as np
import pytest

from jointdet import (
    BoundingBox,
    average_precision,
    evaluate_detector,
    iou,
    match_detections,
)
from jointdet.evalkit import evaluate_detections


def box(x1, y1, x2, y2, score=None):
    return BoundingBox(float(x1), float(y1), float(x2), float(y2), score=score)


class TestIou:
    def test_identical(self):
        b = box(3, 4, 10, 12)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(box(0, 0, 1, 1), box(5, 5, 6, 6)) == 0.0

    def test_one_third_case(self):
        # intersection 2, union 6
        assert abs(iou(box(0, 0, 2, 2), box(1, 0, 3, 2)) - 1.0 / 3.0) < 1e-12

    def test_symmetry(self):
        a, b = box(0, 0, 4, 4), box(2, 1, 6, 5)
        assert iou(a, b) == iou(b, a)

    def test_touching_edges_is_zero(self):
        assert iou(box(0, 0, 2, 2), box(2, 0, 4, 2)) == 0.0


class TestMatchDetections:
    def test_single_exact_match(self):
        truth = box(0, 0, 10, 10)
        det = box(0, 0, 10, 10, score=0.9)
        assert match_detections([det], [truth], 0.5) == [True]

    def test_one_to_one_rule(self):
        truth = box(0, 0, 10, 10)
        dets = [box(0, 0, 10, 10, score=0.9), box(0, 0, 10, 10, score=0.8)]
        assert match_detections(dets, [truth], 0.5) == [True, False]

    def test_unsorted_rejected(self):
        truth = box(0, 0, 10, 10)
        dets = [box(0, 0, 10, 10, score=0.1), box(0, 0, 10, 10, score=0.9)]
        with pytest.raises(ValueError):
            match_detections(dets, [truth], 0.5)

    def test_missing_scores_rejected(self):
        with pytest.raises(ValueError):
            match_detections([box(0, 0, 1, 1)], [box(0, 0, 1, 1)], 0.5)

    def test_matches_greedy_oracle_small_cases(self):
        # [DERIVED ORACLE] re-run the greedy protocol with explicit loops
        # over random 3-detections x 2-truths instances
        rng = np.random.default_rng(42)
        for _ in range(200):
            truths = [
                box(x, y, x + w, y + h)
                for x, y, w, h in rng.integers(1, 5, size=(2, 4))
            ]
            dets = []
            scores = sorted(rng.uniform(size=3), reverse=True)
            for s in scores:
                x, y, w, h = rng.integers(1, 5, size=4)
                dets.append(box(x, y, x + w, y + h, score=float(s)))
            got = match_detections(dets, truths, 0.5)
            taken = set()
            want = []
            for d in dets:
                cand = [
                    (iou(d, t), j)
                    for j, t in enumerate(truths)
                    if j not in taken and iou(d, t) >= 0.5
                ]
                if cand:
                    best = max(cand)
                    taken.add(best[1])
                    want.append(True)
                else:
                    want.append(False)
            assert got == want


def ap_threshold_oracle(flags, scores, total_truths):
    """Brute-force AP: enumerate every score threshold, build the PR
    staircase, and integrate the precision envelope over recall."""
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    flags = np.asarray(flags, dtype=bool)[order]
    scores = np.asarray(scores, dtype=float)[order]
    points = []  # (recall, precision) after including each detection
    tp = fp = 0
    for flag in flags:
        if flag:
            tp += 1
        else:
            fp += 1
        points.append((tp / total_truths, tp / (tp + fp)))
    ap = 0.0
    prev_recall = 0.0
    for i, (recall, _) in enumerate(points):
        # precision envelope: best precision at any recall >= this one
        envelope = max(p for r, p in points[i:])
        ap += (recall - prev_recall) * envelope
        prev_recall = recall
    return ap


class TestAveragePrecision:
    def test_perfect_detections(self):
        report = average_precision([True, True, True], [0.9, 0.8, 0.7], 3)
        assert report.ap == 1.0
        assert report.true_positives == 3
        assert report.false_negatives == 0

    def test_zero_detections(self):
        report = average_precision([], [], 5)
        assert report.ap == 0.0
        assert report.false_negatives == 5

    def test_five_detection_case_vs_oracle(self):
        flags = [True, False, True, False, True]
        scores = [0.9, 0.8, 0.7, 0.6, 0.5]
        report = average_precision(flags, scores, 3)
        assert abs(report.ap - ap_threshold_oracle(flags, scores, 3)) < 1e-9

    def test_recall_nondecreasing_and_counts(self):
        rng = np.random.default_rng(0)
        flags = list(rng.random(20) < 0.4)
        scores = list(rng.uniform(size=20))
        report = average_precision(flags, scores, 10)
        assert all(
            a <= b + 1e-15 for a, b in zip(report.recalls, report.recalls[1:])
        )
        assert report.true_positives + report.false_negatives == 10

    def test_zero_truths_rejected(self):
        with pytest.raises(ValueError):
            average_precision([True], [0.5], 0)

    def test_exhaustive_small_instances_vs_oracle(self):
        # every TP/FP flag pattern with <= 5 detections, several truth counts
        for n_det in range(0, 6):
            for pattern in itertools.product([False, True], repeat=n_det):
                scores = [1.0 - 0.1 * i for i in range(n_det)]
                for total in (1, 2, 3):
                    if sum(pattern) > total:
                        continue
                    got = average_precision(list(pattern), scores, total).ap
                    want = ap_threshold_oracle(list(pattern), scores, total)
                    assert abs(got - want) < 1e-9

    def test_tied_scores_stable_order(self):
        report = average_precision([True, False], [0.5, 0.5], 1)
        # the TP listed first stays first under the stable sort
        assert report.ap == 1.0

    def test_adding_top_tp_never_decreases_ap(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(1, 8))
            flags = list(rng.random(n) < 0.5)
            scores = list(rng.uniform(0.0, 0.8, size=n))
            total = max(2, sum(flags) + 1)
            base = average_precision(flags, scores, total).ap
            more = average_precision([True] + flags, [0.99] + scores, total).ap
            assert more >= base - 1e-12


class TestEvaluateDetections:
    def test_end_to_end_small_instances_vs_oracle(self):
        # [DERIVED ORACLE] exhaustive grid-box family on a 4x4 grid:
        # full pipeline (matching + pooling + AP) vs threshold enumeration
        cells = [
            box(x, y, x + 1, y + 1)
            for x in range(3)
            for y in range(3)
        ]
        rng = np.random.default_rng(9)
        for _ in range(150):
            n_truth = int(rng.integers(1, 4))
            n_det = int(rng.integers(0, 6))
            truths = [cells[i] for i in rng.integers(0, len(cells), n_truth)]
            scores = sorted(rng.uniform(size=n_det), reverse=True)
            dets = [
                box(*cells[int(rng.integers(0, len(cells)))].as_tuple(), score=float(s))
                for s in scores
            ]
            report = evaluate_detections([(dets, truths)], 0.5)
            flags = match_detections(dets, truths, 0.5)
            want = ap_threshold_oracle(flags, [d.score for d in dets], n_truth)
            assert abs(report.ap - want) < 1e-9

    def test_pooling_across_images(self):
        truths = [box(0, 0, 2, 2)]
        hit = [box(0, 0, 2, 2, score=0.6)]
        miss = [box(5, 5, 7, 7, score=0.9)]
        report = evaluate_detections([(hit, truths), (miss, truths)], 0.5)
        # the high-scored FP from image 2 outranks the TP from image 1
        flags = [False, True]
        scores = [0.9, 0.6]
        assert abs(report.ap - ap_threshold_oracle(flags, scores, 2)) < 1e-12

    def test_no_truths_rejected(self):
        with pytest.raises(ValueError):
            evaluate_detections([([], [])])


class _OracleDetector:
    """Stand-in state whose predict path is bypassed via evaluate_detections."""


class TestEvaluateDetector:
    def test_perfect_oracle_scores_one(self, memory_dataset):
        # emit ground truth with score 1.0 by monkey-patching predict
        from jointdet import detector as det_mod

        truth_lookup = [boxes for _, boxes in memory_dataset.image_test]
        calls = {"i": 0}

        class FakeState:
            pass

        def fake_predict(state, pixels):
            boxes = truth_lookup[calls["i"] % len(truth_lookup)]
            calls["i"] += 1
            return [
                det_mod.Detection(
                    box=BoundingBox(*b.as_tuple(), score=1.0), score=1.0
                )
                for b in boxes
            ]

        original = det_mod.predict
        det_mod.predict = fake_predict
        try:
            report = evaluate_detector(FakeState(), memory_dataset.image_test)
        finally:
            det_mod.predict = original
        assert report.ap == 1.0

    def test_empty_split_rejected(self):
        with pytest.raises(ValueError):
            evaluate_detector(object(), [])

    def test_report_serialization(self, tmp_path):
        report = average_precision([True, False, True], [0.9, 0.5, 0.4], 2)
        json_path = tmp_path / "report.json"
        csv_path = tmp_path / "report.csv"
        report.save_json(json_path)
        report.save_pr_csv(csv_path)
        import csv as csv_mod
        import json as json_mod

        with open(json_path) as fh:
            loaded = json_mod.load(fh)
        assert loaded["ap"] == report.ap
        with open(csv_path) as fh:
            rows = list(csv_mod.reader(fh))
        assert rows[0] == ["threshold", "precision", "recall"]
        assert len(rows) == 1 + len(report.thresholds)
