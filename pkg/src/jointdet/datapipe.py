"""Corpus loading and joint batch streaming.

Each epoch visits every labeled training image exactly once in a seeded
shuffled order; negative frames (mixup partners) and frame triples are
drawn uniformly with replacement.  Horizontal flip is applied to the
labeled image, and then the image is blended with its partner frame.

The supervised stream and the triple stream use independent random
streams derived from (seed, epoch), so enabling or disabling triples
never perturbs the supervised samples, and training can resume at any
epoch boundary and see exactly the batches an uninterrupted run would.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .boxes import BoundingBox
from .mixup import MixupConfig, MixupSample, make_virtual_sample, sample_lambda
from .samples import FrameTriple, LabeledImage, VideoFrame
from .synthgen import SCHEMA_VERSION


class ManifestError(Exception):
    """Raised when a corpus manifest is missing, malformed, or inconsistent."""


def _load_png(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return arr


class _FrameCache:
    """Lazily loaded frames, kept as uint8 to bound memory."""

    def __init__(self, root: Path):
        self.root = root
        self._cache: Dict[str, np.ndarray] = {}

    def pixels(self, rel_path: str) -> np.ndarray:
        if rel_path not in self._cache:
            full = self.root / rel_path
            if not full.is_file():
                raise ManifestError(f"manifest references missing file: {full}")
            self._cache[rel_path] = _load_png(full)
        return self._cache[rel_path].astype(np.float64) / 255.0


@dataclass
class ImageSplit:
    """A labeled-image split: iterable of (pixels, boxes)."""

    cache: _FrameCache
    items: List[dict]

    def __len__(self) -> int:
        return len(self.items)

    def image(self, index: int) -> LabeledImage:
        item = self.items[index]
        boxes = tuple(BoundingBox(*b) for b in item["boxes"])
        if "pixels" in item:  # in-memory split, no backing file
            return LabeledImage(pixels=item["pixels"], boxes=boxes)
        return LabeledImage(pixels=self.cache.pixels(item["path"]), boxes=boxes)

    def __iter__(self) -> Iterator[Tuple[np.ndarray, Tuple[BoundingBox, ...]]]:
        for i in range(len(self.items)):
            image = self.image(i)
            yield image.pixels, image.boxes


@dataclass
class VideoSplit:
    """Unlabeled videos; provides random frames and frame triples."""

    cache: _FrameCache
    videos: List[dict]

    def __len__(self) -> int:
        return len(self.videos)

    def frame(self, video_index: int, frame_index: int) -> VideoFrame:
        video = self.videos[video_index]
        if "pixel_frames" in video:  # in-memory video, no backing files
            pixels = video["pixel_frames"][frame_index]
        else:
            pixels = self.cache.pixels(video["frames"][frame_index])
        return VideoFrame(
            pixels=pixels,
            frame_index=frame_index,
            source_video=video["video_id"],
        )

    def triple(self, video_index: int, start: int) -> FrameTriple:
        return FrameTriple(
            prev=self.frame(video_index, start),
            mid=self.frame(video_index, start + 1),
            next=self.frame(video_index, start + 2),
        )


@dataclass
class CorpusDataset:
    root: Optional[Path]
    manifest: dict
    image_train: ImageSplit
    image_test: ImageSplit
    video_train: VideoSplit
    video_test: ImageSplit  # labeled positive frames, evaluated like images


def in_memory_dataset(
    train_images: Sequence[LabeledImage],
    test_images: Sequence[LabeledImage] = (),
    videos: Sequence[Sequence[np.ndarray]] = (),
    video_test_images: Sequence[LabeledImage] = (),
) -> CorpusDataset:
    """Build a CorpusDataset directly from arrays, without files on disk."""
    cache = _FrameCache(Path("."))

    def image_items(images):
        return [
            {"pixels": img.pixels, "boxes": [list(b.as_tuple()) for b in img.boxes]}
            for img in images
        ]

    video_items = [
        {
            "video_id": f"mem_{i:02d}",
            "n_frames": len(frames),
            "pixel_frames": [np.asarray(f) for f in frames],
        }
        for i, frames in enumerate(videos)
    ]
    return CorpusDataset(
        root=None,
        manifest={"schema_version": SCHEMA_VERSION, "items": {}},
        image_train=ImageSplit(cache, image_items(train_images)),
        image_test=ImageSplit(cache, image_items(test_images)),
        video_train=VideoSplit(cache, video_items),
        video_test=ImageSplit(cache, image_items(video_test_images)),
    )


def load_manifest(path) -> CorpusDataset:
    """Load and validate a corpus manifest; file contents stay lazy."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"corrupted manifest {path}, line {exc.lineno}: {exc.msg}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(
            f"unsupported manifest schema version {manifest.get('schema_version')!r} in {path}"
        )
    items = manifest.get("items")
    required = {"image-train", "image-test", "video-train", "video-test"}
    if not isinstance(items, dict) or not required <= set(items):
        raise ManifestError(f"manifest {path} is missing split lists {sorted(required)}")
    root = path.parent
    cache = _FrameCache(root)
    for split in ("image-train", "image-test", "video-test"):
        for item in items[split]:
            if not (root / item["path"]).is_file():
                raise ManifestError(f"manifest references missing file: {root / item['path']}")
    for video in items["video-train"]:
        for rel in video["frames"]:
            if not (root / rel).is_file():
                raise ManifestError(f"manifest references missing file: {root / rel}")
    return CorpusDataset(
        root=root,
        manifest=manifest,
        image_train=ImageSplit(cache, items["image-train"]),
        image_test=ImageSplit(cache, items["image-test"]),
        video_train=VideoSplit(cache, items["video-train"]),
        video_test=ImageSplit(cache, items["video-test"]),
    )


def horizontal_flip(
    image: LabeledImage, rng: np.random.Generator, probability: float
) -> LabeledImage:
    """Mirror the image and its boxes about the vertical axis with the
    given probability.  Always consumes exactly one variate."""
    if not (0.0 <= probability <= 1.0):
        raise ValueError(f"probability {probability} outside [0, 1]")
    if rng.random() >= probability:
        return image
    return flip_image(image)


def flip_image(image: LabeledImage) -> LabeledImage:
    w = image.pixels.shape[1]
    flipped = image.pixels[:, ::-1, :].copy()
    boxes = tuple(
        BoundingBox(w - b.x_max, b.y_min, w - b.x_min, b.y_max, score=b.score)
        for b in image.boxes
    )
    return LabeledImage(pixels=flipped, boxes=boxes)


@dataclass
class JointBatch:
    mixup_samples: List[MixupSample]
    triples: List[FrameTriple]
    epoch: int
    step: int  # global step index across epochs


def batches_per_epoch(n_images: int, batch_size: int) -> int:
    return (n_images + batch_size - 1) // batch_size


def joint_batches(
    dataset: CorpusDataset,
    mixup_config: MixupConfig,
    batch_size: int,
    triple_batch_size: int,
    flip_probability: float,
    seed: int,
    epochs: int,
    start_epoch: int = 0,
) -> Iterator[JointBatch]:
    """Stream JointBatches for the given epoch range.

    The last batch of an epoch is short when the image count is not
    divisible by batch_size.  Randomness is re-derived from (seed, epoch)
    at each epoch boundary.
    """
    n = len(dataset.image_train)
    if n == 0:
        raise ValueError("image-train split is empty")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if triple_batch_size > 0:
        usable = [
            i for i, v in enumerate(dataset.video_train.videos) if v["n_frames"] >= 3
        ]
        if not usable:
            raise ValueError("triples requested but video-train has no usable video")
    step = start_epoch * batches_per_epoch(n, batch_size)
    for epoch in range(start_epoch, epochs):
        data_rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, 0]))
        triple_rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, 1]))
        order = data_rng.permutation(n)
        for lo in range(0, n, batch_size):
            indices = order[lo : lo + batch_size]
            samples = []
            for idx in indices:
                image = dataset.image_train.image(int(idx))
                image = horizontal_flip(image, data_rng, flip_probability)
                if len(dataset.video_train) == 0:
                    # image-only corpus: valid as long as no blending occurs
                    lam = sample_lambda(mixup_config, data_rng)
                    if lam != 0.0:
                        raise ValueError("mixup needs a nonempty video-train split")
                    samples.append(
                        MixupSample(
                            pixels=image.pixels.copy(),
                            boxes=tuple(image.boxes),
                            lambda_used=0.0,
                        )
                    )
                    continue
                vi = int(data_rng.integers(len(dataset.video_train)))
                fi = int(
                    data_rng.integers(dataset.video_train.videos[vi]["n_frames"])
                )
                frame = dataset.video_train.frame(vi, fi)
                samples.append(make_virtual_sample(image, frame, mixup_config, data_rng))
            triples = []
            for _ in range(triple_batch_size):
                vi = usable[int(triple_rng.integers(len(usable)))]
                n_frames = dataset.video_train.videos[vi]["n_frames"]
                start = int(triple_rng.integers(n_frames - 2))
                triples.append(dataset.video_train.triple(vi, start))
            yield JointBatch(mixup_samples=samples, triples=triples, epoch=epoch, step=step)
            step += 1
