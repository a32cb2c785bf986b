"""Mixup with negative video frames.

Virtual training samples are built by blending a labeled image with a
negative frame at the pixel level while keeping the image's boxes
unchanged.  The blend weight lambda is the weight on the negative frame,
so lambda = 0 leaves the image untouched.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .boxes import BoundingBox
from .samples import LabeledImage, VideoFrame
from .validation import check_probability


class LambdaDistribution(enum.Enum):
    BETA = "beta"
    DISCRETE = "discrete"


@dataclass(frozen=True)
class MixupConfig:
    """Choice and parameters of the blend-weight distribution.

    BETA draws lambda ~ Beta(alpha, alpha + 1); DISCRETE draws lambda = c
    with probability p and 0 otherwise.
    """

    distribution: LambdaDistribution
    alpha: Optional[float] = None
    c: Optional[float] = None
    p: Optional[float] = None

    def __post_init__(self):
        if self.distribution is LambdaDistribution.BETA:
            if self.alpha is None or self.alpha <= 0:
                raise ValueError("BETA requires alpha > 0")
            if self.c is not None or self.p is not None:
                raise ValueError("c/p are DISCRETE parameters")
        elif self.distribution is LambdaDistribution.DISCRETE:
            if self.c is None or self.p is None:
                raise ValueError("DISCRETE requires both c and p")
            check_probability(self.c, "c")
            check_probability(self.p, "p")
            if self.alpha is not None:
                raise ValueError("alpha is a BETA parameter")
        else:  # pragma: no cover
            raise ValueError(f"unknown distribution {self.distribution}")

    @staticmethod
    def beta(alpha: float) -> "MixupConfig":
        return MixupConfig(LambdaDistribution.BETA, alpha=alpha)

    @staticmethod
    def discrete(c: float, p: float) -> "MixupConfig":
        return MixupConfig(LambdaDistribution.DISCRETE, c=c, p=p)

    @staticmethod
    def identity() -> "MixupConfig":
        """A config whose samples are always the unmodified image."""
        return MixupConfig.discrete(c=0.0, p=0.0)

    def to_dict(self) -> dict:
        d = {"distribution": self.distribution.value}
        if self.distribution is LambdaDistribution.BETA:
            d["alpha"] = self.alpha
        else:
            d["c"] = self.c
            d["p"] = self.p
        return d

    @staticmethod
    def from_dict(d: dict) -> "MixupConfig":
        d = dict(d)
        try:
            dist = LambdaDistribution(d.pop("distribution"))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"bad mixup distribution: {exc}") from exc
        cfg = MixupConfig(dist, **d)
        return cfg


@dataclass
class MixupSample:
    """A virtual sample: blended pixels, the source image's boxes, and the
    lambda that produced it."""

    pixels: np.ndarray
    boxes: Tuple[BoundingBox, ...]
    lambda_used: float


def sample_lambda(config: MixupConfig, rng: np.random.Generator) -> float:
    """Draw one blend weight.  Always consumes exactly one variate from rng."""
    if config.distribution is LambdaDistribution.BETA:
        return float(rng.beta(config.alpha, config.alpha + 1.0))
    if rng.random() < config.p:
        return float(config.c)
    return 0.0


def bilinear_resize(pixels: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel-centered coordinates and edge clamp.

    Resizing to the source size reproduces the input bit for bit.
    """
    if target_h <= 0 or target_w <= 0:
        raise ValueError(f"target size must be positive, got {target_h}x{target_w}")
    src_h, src_w = pixels.shape[:2]
    ys = (np.arange(target_h) + 0.5) * (src_h / target_h) - 0.5
    xs = (np.arange(target_w) + 0.5) * (src_w / target_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, src_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = pixels[y0][:, x0] * (1.0 - wx) + pixels[y0][:, x1] * wx
    bot = pixels[y1][:, x0] * (1.0 - wx) + pixels[y1][:, x1] * wx
    return top * (1.0 - wy) + bot * wy


def resize_frame(frame: VideoFrame, target_h: int, target_w: int) -> VideoFrame:
    """Resize a frame; returns the same object-level metadata."""
    if frame.pixels.shape[0] == target_h and frame.pixels.shape[1] == target_w:
        return frame
    resized = np.clip(bilinear_resize(frame.pixels, target_h, target_w), 0.0, 1.0)
    return VideoFrame(
        pixels=resized,
        frame_index=frame.frame_index,
        source_video=frame.source_video,
    )


def blend_inputs(
    image_pixels: np.ndarray, frame_pixels: np.ndarray, lam: float
) -> np.ndarray:
    """Convex combination (1 - lam) * image + lam * frame.

    lam = 0 and lam = 1 reproduce the respective input bit for bit.
    """
    if image_pixels.shape != frame_pixels.shape:
        raise ValueError(
            f"shape mismatch: {image_pixels.shape} vs {frame_pixels.shape}"
        )
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lambda {lam} outside [0, 1]")
    if lam == 0.0:
        return image_pixels.copy()
    if lam == 1.0:
        return frame_pixels.copy()
    return (1.0 - lam) * image_pixels + lam * frame_pixels


def make_virtual_sample(
    image: LabeledImage,
    frame: VideoFrame,
    config: MixupConfig,
    rng: np.random.Generator,
) -> MixupSample:
    """Resize the frame to the image, blend with a sampled lambda, keep boxes."""
    lam = sample_lambda(config, rng)
    h, w = image.pixels.shape[:2]
    resized = resize_frame(frame, h, w)
    blended = blend_inputs(image.pixels, resized.pixels, lam)
    return MixupSample(pixels=blended, boxes=tuple(image.boxes), lambda_used=lam)
