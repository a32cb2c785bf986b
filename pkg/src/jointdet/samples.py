"""Sample carriers: labeled stills, video frames, and frame triples."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .boxes import BoundingBox
from .validation import check_boxes_in_image, check_pixel_grid


@dataclass
class LabeledImage:
    """A still image with zero or more ground-truth boxes."""

    pixels: np.ndarray  # H x W x C, float in [0, 1]
    boxes: Tuple[BoundingBox, ...] = ()

    def __post_init__(self):
        self.pixels = check_pixel_grid(self.pixels)
        self.boxes = tuple(self.boxes)
        h, w = self.pixels.shape[:2]
        check_boxes_in_image(self.boxes, h, w)

    @property
    def shape(self):
        return self.pixels.shape


@dataclass
class VideoFrame:
    """An unlabeled frame from a source video."""

    pixels: np.ndarray  # H x W x C, float in [0, 1]
    frame_index: int = 0
    source_video: str = ""

    def __post_init__(self):
        self.pixels = check_pixel_grid(self.pixels)

    @property
    def shape(self):
        return self.pixels.shape


@dataclass
class FrameTriple:
    """Three temporally adjacent frames from the same video."""

    prev: VideoFrame
    mid: VideoFrame
    next: VideoFrame
    stride: int = 1

    def __post_init__(self):
        if self.prev.shape != self.mid.shape or self.mid.shape != self.next.shape:
            raise ValueError("triple frames must share a shape")
        if (
            self.mid.frame_index - self.prev.frame_index != self.stride
            or self.next.frame_index - self.mid.frame_index != self.stride
        ):
            raise ValueError(
                "frame indices must be consecutive at the configured stride: "
                f"{self.prev.frame_index}, {self.mid.frame_index}, {self.next.frame_index}"
            )
