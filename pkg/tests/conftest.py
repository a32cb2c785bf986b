"""Shared fixtures: tiny in-memory datasets and a small on-disk corpus."""

import numpy as np
import pytest

from jointdet import (
    BoundingBox,
    CorpusConfig,
    LabeledImage,
    gen_corpus,
    in_memory_dataset,
    load_manifest,
)

TINY_CORPUS_CONFIG = CorpusConfig(
    seed=7,
    images=12,
    neg_videos=2,
    pos_videos=1,
    frames_per_neg=6,
    frames_per_pos=4,
)


@pytest.fixture(scope="session")
def tiny_corpus_dir(tmp_path_factory):
    """A minimal on-disk corpus shared across the session."""
    root = tmp_path_factory.mktemp("corpus")
    gen_corpus(TINY_CORPUS_CONFIG, root)
    return root


@pytest.fixture(scope="session")
def tiny_corpus(tiny_corpus_dir):
    return load_manifest(tiny_corpus_dir)


def random_image(rng, h=32, w=32, box=None):
    pixels = rng.uniform(0.0, 1.0, size=(h, w, 3))
    boxes = (box,) if box is not None else ()
    return LabeledImage(pixels=pixels, boxes=boxes)


@pytest.fixture
def memory_dataset():
    """A small fully in-memory dataset: 6 labeled 32x32 images, one
    6-frame video, and 2 labeled video-test frames."""
    rng = np.random.default_rng(123)
    train = [
        random_image(rng, box=BoundingBox(8.0, 8.0, 22.0, 22.0)) for _ in range(6)
    ]
    test = [random_image(rng, box=BoundingBox(6.0, 9.0, 20.0, 23.0)) for _ in range(2)]
    video = [rng.uniform(0.0, 1.0, size=(32, 32, 3)) for _ in range(6)]
    video_test = [
        random_image(rng, box=BoundingBox(10.0, 5.0, 24.0, 19.0)) for _ in range(2)
    ]
    return in_memory_dataset(train, test, [video], video_test)
