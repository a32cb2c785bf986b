"""IoU, greedy matching, and average precision at a fixed IoU threshold."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .boxes import BoundingBox


@dataclass
class APReport:
    ap: float
    iou_threshold: float
    num_truths: int
    true_positives: int
    false_positives: int
    false_negatives: int
    # one point per detection, swept in descending score order
    thresholds: List[float] = field(default_factory=list)
    precisions: List[float] = field(default_factory=list)
    recalls: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "iou_threshold": self.iou_threshold,
            "num_truths": self.num_truths,
            "true_positives": self.true_positives,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
            "thresholds": self.thresholds,
            "precisions": self.precisions,
            "recalls": self.recalls,
        }

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def save_pr_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "precision", "recall"])
            for row in zip(self.thresholds, self.precisions, self.recalls):
                writer.writerow(row)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    if a.area <= 0 or b.area <= 0:
        raise ValueError("zero-area box")
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def match_detections(
    detections: Sequence[BoundingBox],
    truths: Sequence[BoundingBox],
    iou_threshold: float,
) -> List[bool]:
    """Greedy one-to-one matching in score order.

    Each detection takes the highest-IoU still-unmatched truth if that IoU
    reaches the threshold (true positive), otherwise it is a false
    positive.  Input must already be sorted by descending score.
    """
    scores = [d.score for d in detections]
    if any(s is None for s in scores):
        raise ValueError("detections must carry scores")
    if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
        raise ValueError("detections must be sorted by descending score")
    matched = [False] * len(truths)
    flags: List[bool] = []
    for det in detections:
        best_iou, best_j = 0.0, -1
        for j, truth in enumerate(truths):
            if matched[j]:
                continue
            value = iou(det, truth)
            if value > best_iou:
                best_iou, best_j = value, j
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(
    flags: Sequence[bool],
    scores: Sequence[float],
    total_truths: int,
    iou_threshold: float = 0.5,
) -> APReport:
    """All-points interpolated AP from pooled per-detection TP/FP flags.

    Detections are swept in descending score order (ties kept in input
    order); AP is the area under the precision envelope as a function of
    recall.
    """
    if total_truths < 1:
        raise ValueError("total_truths must be >= 1")
    if len(flags) != len(scores):
        raise ValueError("flags and scores must align")
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    flags_arr = np.asarray(flags, dtype=bool)[order]
    scores_arr = np.asarray(scores, dtype=float)[order]
    tp = np.cumsum(flags_arr)
    fp = np.cumsum(~flags_arr)
    recalls = tp / total_truths
    precisions = tp / np.maximum(tp + fp, 1)
    if len(flags_arr):
        envelope = np.maximum.accumulate(precisions[::-1])[::-1]
        prev_recall = np.concatenate([[0.0], recalls[:-1]])
        ap = float(np.sum((recalls - prev_recall) * envelope))
        n_tp = int(tp[-1])
        n_fp = int(fp[-1])
    else:
        ap, n_tp, n_fp = 0.0, 0, 0
    return APReport(
        ap=ap,
        iou_threshold=iou_threshold,
        num_truths=total_truths,
        true_positives=n_tp,
        false_positives=n_fp,
        false_negatives=total_truths - n_tp,
        thresholds=[float(s) for s in scores_arr],
        precisions=[float(p) for p in precisions],
        recalls=[float(r) for r in recalls],
    )


def evaluate_detections(
    per_image: Sequence[Tuple[Sequence[BoundingBox], Sequence[BoundingBox]]],
    iou_threshold: float = 0.5,
) -> APReport:
    """AP over a dataset given (detections, truths) pairs per image.

    Flags are pooled globally across images before the precision-recall
    sweep, the standard single-class protocol.
    """
    all_flags: List[bool] = []
    all_scores: List[float] = []
    total_truths = 0
    for detections, truths in per_image:
        detections = sorted(detections, key=lambda d: -d.score)
        flags = match_detections(detections, truths, iou_threshold)
        all_flags.extend(flags)
        all_scores.extend(d.score for d in detections)
        total_truths += len(truths)
    if total_truths == 0:
        raise ValueError("split has no ground-truth boxes")
    return average_precision(all_flags, all_scores, total_truths, iou_threshold)


def evaluate_detector(state, split, iou_threshold: float = 0.5) -> APReport:
    """Run a detector over every item of a split and compute its AP.

    split is any iterable of (pixels, truth_boxes) pairs, e.g. a
    SplitHandle from the data pipeline; state is a DetectorState.
    """
    from .detector import predict  # local import to keep evalkit torch-free

    pairs = []
    n_items = 0
    for pixels, truths in split:
        detections = [d.box for d in predict(state, pixels)]
        pairs.append((detections, truths))
        n_items += 1
    if n_items == 0:
        raise ValueError("empty split")
    return evaluate_detections(pairs, iou_threshold)
