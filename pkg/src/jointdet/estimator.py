"""Scikit-learn style front end.

Wraps the training driver and reference detector behind a fit/predict
estimator so the pipeline composes with the wider ecosystem.  X is a
sequence of H x W x C float images in [0, 1]; y is a sequence of box
lists, each box an (x_min, y_min, x_max, y_max) tuple.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator

from .boxes import BoundingBox
from .datapipe import in_memory_dataset
from .detector import DetectorConfig, predict as _predict
from .driver import Arm, TrainingConfig, train
from .evalkit import evaluate_detections
from .mixup import MixupConfig
from .samples import LabeledImage
from .validation import check_pixel_grid


def _as_labeled_images(X, y) -> List[LabeledImage]:
    if len(X) != len(y):
        raise ValueError(f"X and y length mismatch: {len(X)} vs {len(y)}")
    images = []
    for pixels, boxes in zip(X, y):
        pixels = check_pixel_grid(np.asarray(pixels, dtype=np.float64))
        images.append(
            LabeledImage(pixels=pixels, boxes=tuple(BoundingBox(*b[:4]) for b in boxes))
        )
    return images


class MixupTcrDetector(BaseEstimator):
    """Single-frame detector trained jointly from labeled images and
    unlabeled video, with negative-frame mixup and temporal regularization.

    Parameters mirror the training configuration; `videos` passed to fit
    supplies the unlabeled negative material required by the mixup and
    tcr arms.
    """

    def __init__(
        self,
        arm: str = "mixup_tcr",
        epochs: int = 10,
        batch_size: int = 8,
        triple_batch_size: int = 8,
        gamma: float = 0.01,
        mixup_distribution: str = "discrete",
        mixup_alpha: float = 0.05,
        mixup_c: float = 0.5,
        mixup_p: float = 0.2,
        flip_probability: float = 0.5,
        momentum: float = 0.9,
        weight_decay: float = 1e-4,
        feature_channels: int = 32,
        feature_stride: int = 8,
        score_threshold: float = 0.05,
        random_state: int = 0,
    ):
        self.arm = arm
        self.epochs = epochs
        self.batch_size = batch_size
        self.triple_batch_size = triple_batch_size
        self.gamma = gamma
        self.mixup_distribution = mixup_distribution
        self.mixup_alpha = mixup_alpha
        self.mixup_c = mixup_c
        self.mixup_p = mixup_p
        self.flip_probability = flip_probability
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.feature_channels = feature_channels
        self.feature_stride = feature_stride
        self.score_threshold = score_threshold
        self.random_state = random_state

    def _training_config(self) -> TrainingConfig:
        if self.mixup_distribution == "beta":
            mixup = MixupConfig.beta(self.mixup_alpha)
        elif self.mixup_distribution == "discrete":
            mixup = MixupConfig.discrete(c=self.mixup_c, p=self.mixup_p)
        else:
            raise ValueError(f"unknown mixup_distribution {self.mixup_distribution!r}")
        return TrainingConfig(
            arm=Arm(self.arm),
            epochs=self.epochs,
            batch_size=self.batch_size,
            triple_batch_size=self.triple_batch_size,
            gamma=self.gamma,
            mixup=mixup,
            flip_probability=self.flip_probability,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            seed=self.random_state,
            detector=DetectorConfig(
                feature_channels=self.feature_channels,
                feature_stride=self.feature_stride,
                score_threshold=self.score_threshold,
            ),
        )

    def fit(self, X, y, videos: Sequence[Sequence[np.ndarray]] = ()):
        """Train on labeled images plus optional unlabeled negative videos.

        videos is a sequence of frame sequences (each frame H x W x C in
        [0, 1]), required for every arm except "base".
        """
        config = self._training_config()
        dataset = in_memory_dataset(_as_labeled_images(X, y), videos=videos)
        record = train(config, dataset, eval_every=0)
        self.config_ = config
        self.record_ = record
        self.state_ = record._state
        return self

    def predict(self, X) -> List[List[Tuple[float, float, float, float, float]]]:
        """Per-image detections as (x_min, y_min, x_max, y_max, score)."""
        self._check_fitted()
        results = []
        for pixels in X:
            pixels = check_pixel_grid(np.asarray(pixels, dtype=np.float64))
            dets = _predict(self.state_, pixels)
            results.append([(*d.box.as_tuple(), d.score) for d in dets])
        return results

    def score(self, X, y) -> float:
        """Average precision at IoU 0.5 over the given labeled set."""
        self._check_fitted()
        pairs = []
        for pixels, boxes in zip(X, y):
            pixels = check_pixel_grid(np.asarray(pixels, dtype=np.float64))
            dets = [d.box for d in _predict(self.state_, pixels)]
            pairs.append((dets, [BoundingBox(*b[:4]) for b in boxes]))
        return evaluate_detections(pairs).ap

    def _check_fitted(self):
        if getattr(self, "state_", None) is None:
            raise RuntimeError("estimator is not fitted; call fit first")
