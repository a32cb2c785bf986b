"""Synthetic corpus generator: geometry oracles, determinism, manifests."""

import hashlib
import json
import math

import numpy as np
import pytest

from jointdet import (
    CorpusConfig,
    SceneSpec,
    SceneStyle,
    gen_corpus,
    gen_report_image,
    gen_video,
    split_counts,
)
from jointdet.synthgen import _Target, _sample_targets

from conftest import TINY_CORPUS_CONFIG


def report_spec(seed, targets=1, **kw):
    return SceneSpec(seed=seed, style=SceneStyle.REPORT, targets=targets, **kw)


def video_spec(seed, n_frames=5, targets=1, **kw):
    return SceneSpec(
        seed=seed, style=SceneStyle.VIDEO, targets=targets, n_frames=n_frames, **kw
    )


class TestSpec:
    def test_report_must_be_single_frame(self):
        with pytest.raises(ValueError):
            SceneSpec(seed=0, style=SceneStyle.REPORT, n_frames=4)

    def test_negative_jitter_rejected(self):
        with pytest.raises(ValueError):
            SceneSpec(seed=0, style=SceneStyle.VIDEO, jitter=-1.0, n_frames=3)

    def test_wrong_style_rejected_by_generators(self):
        with pytest.raises(ValueError):
            gen_report_image(video_spec(0))
        with pytest.raises(ValueError):
            gen_video(report_spec(0))


class TestReportImage:
    def test_zero_targets_empty_boxes(self):
        image = gen_report_image(report_spec(3, targets=0))
        assert image.boxes == ()
        assert image.pixels.shape == (64, 64, 3)

    def test_deterministic(self):
        a = gen_report_image(report_spec(11))
        b = gen_report_image(report_spec(11))
        assert np.array_equal(a.pixels, b.pixels)
        assert a.boxes == b.boxes

    def test_pixels_in_unit_interval(self):
        image = gen_report_image(report_spec(5, targets=2))
        assert image.pixels.min() >= 0.0 and image.pixels.max() <= 1.0

    def test_box_count_matches_targets(self):
        image = gen_report_image(report_spec(7, targets=2))
        assert len(image.boxes) == 2

    def test_box_tightness_rasterization_oracle(self):
        # [DERIVED ORACLE] rasterize each ellipse from its analytic equation;
        # the returned box must cover >= 95% of target pixels and be at most
        # 1.3x the area of the rasterized tight rectangle
        for seed in range(10):
            spec = report_spec(seed)
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xA1]))
            targets = _sample_targets(rng, spec)
            image = gen_report_image(spec)
            assert len(targets) == len(image.boxes)
            ys, xs = np.mgrid[0:64, 0:64].astype(float)
            for t, box in zip(targets, image.boxes):
                u = xs + 0.5 - t.cx
                v = ys + 0.5 - t.cy
                ru = u * math.cos(t.theta) + v * math.sin(t.theta)
                rv = -u * math.sin(t.theta) + v * math.cos(t.theta)
                inside = (ru / t.a) ** 2 + (rv / t.b) ** 2 <= 1.0
                n_inside = inside.sum()
                assert n_inside > 0
                in_box = (
                    (xs + 0.5 >= box.x_min)
                    & (xs + 0.5 <= box.x_max)
                    & (ys + 0.5 >= box.y_min)
                    & (ys + 0.5 <= box.y_max)
                )
                covered = (inside & in_box).sum() / n_inside
                assert covered >= 0.95
                yy, xx = np.nonzero(inside)
                tight_area = (xx.max() - xx.min() + 1) * (yy.max() - yy.min() + 1)
                assert box.area <= 1.3 * tight_area


class TestVideo:
    def test_frame_count_and_indices(self):
        frames, boxes = gen_video(video_spec(0, n_frames=100))
        assert len(frames) == 100 and len(boxes) == 100
        assert [f.frame_index for f in frames] == list(range(100))

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            gen_video(video_spec(0, n_frames=2))

    def test_zero_jitter_static(self):
        frames, _ = gen_video(video_spec(1, n_frames=4, jitter=0.0))
        for f in frames[1:]:
            assert np.array_equal(f.pixels, frames[0].pixels)

    def test_negative_video_has_no_boxes(self):
        _, boxes = gen_video(video_spec(2, n_frames=5, targets=0))
        assert all(b == () for b in boxes)

    def test_deterministic(self):
        a, _ = gen_video(video_spec(3, n_frames=4))
        b, _ = gen_video(video_spec(3, n_frames=4))
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.pixels, fb.pixels)

    def test_interframe_difference_bounded(self):
        # mean absolute inter-frame difference stays within the calibrated
        # bound 4 * jitter / width for a bounded camera walk
        jitter = 1.5
        frames, _ = gen_video(video_spec(4, n_frames=20, jitter=jitter))
        bound = 4.0 * jitter / 64
        for a, b in zip(frames, frames[1:]):
            diff = np.abs(a.pixels - b.pixels).mean()
            assert diff <= bound

    def test_target_boxes_track_motion(self):
        frames, boxes = gen_video(video_spec(5, n_frames=6, jitter=2.0))
        assert all(len(b) == 1 for b in boxes)
        xs = [b[0].x_min for b in boxes]
        assert max(xs) - min(xs) <= 2.0 * (len(frames) - 1) + 1e-9


class TestSplitCounts:
    def test_reference_ratio(self):
        # mirrors the reference 2456:600 proportions
        train, test = split_counts(2000)
        assert test == (2000 * 600) // 3056 == 392
        assert train == 2000 - 392

    def test_small_total(self):
        train, test = split_counts(12)
        assert train + test == 12
        assert train > 0


class TestCorpus:
    def test_manifest_structure(self, tiny_corpus_dir):
        with open(tiny_corpus_dir / "manifest.json") as fh:
            manifest = json.load(fh)
        assert manifest["schema_version"] == 1
        items = manifest["items"]
        assert set(items) == {"image-train", "image-test", "video-train", "video-test"}
        cfg = TINY_CORPUS_CONFIG
        n_train, n_test = split_counts(cfg.images)
        assert len(items["image-train"]) == n_train
        assert len(items["image-test"]) == n_test
        assert len(items["video-train"]) == cfg.neg_videos
        assert 0 < len(items["video-test"]) <= cfg.pos_videos * cfg.frames_per_pos

    def test_every_file_exists(self, tiny_corpus_dir):
        with open(tiny_corpus_dir / "manifest.json") as fh:
            items = json.load(fh)["items"]
        for split in ("image-train", "image-test", "video-test"):
            for item in items[split]:
                assert (tiny_corpus_dir / item["path"]).is_file()
        for video in items["video-train"]:
            assert video["n_frames"] == len(video["frames"])
            for rel in video["frames"]:
                assert (tiny_corpus_dir / rel).is_file()

    def test_positive_items_have_boxes(self, tiny_corpus_dir):
        with open(tiny_corpus_dir / "manifest.json") as fh:
            items = json.load(fh)["items"]
        for split in ("image-train", "image-test", "video-test"):
            for item in items[split]:
                assert len(item["boxes"]) >= 1 or split != "video-test"
        for item in items["video-test"]:
            assert len(item["boxes"]) >= 1

    def test_reproducible_checksum(self, tmp_path):
        digests = []
        for sub in ("a", "b"):
            root = tmp_path / sub
            gen_corpus(TINY_CORPUS_CONFIG, root)
            h = hashlib.sha256()
            for path in sorted(root.rglob("*")):
                if path.is_file():
                    h.update(path.relative_to(root).as_posix().encode())
                    h.update(path.read_bytes())
            digests.append(h.hexdigest())
        assert digests[0] == digests[1]

    def test_config_round_trip(self):
        cfg = CorpusConfig(seed=3, images=40)
        assert CorpusConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValueError):
            CorpusConfig.from_dict({"images": 40, "wumpus": 1})

    def test_minimums_enforced(self):
        with pytest.raises(ValueError):
            CorpusConfig(images=5)
        with pytest.raises(ValueError):
            CorpusConfig(neg_videos=0)
        with pytest.raises(ValueError):
            CorpusConfig(frames_per_neg=2)
