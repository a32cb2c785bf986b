"""Synthetic corpus generator.

Manufactures the image/video domain gap at desk scale: "report" stills
have large, centered, sharp targets on clean textured backgrounds, while
"video" frames carry smaller off-center targets with motion blur,
vignetting, and a color cast on temporally coherent drifting backgrounds.
Negative videos contain no targets anywhere.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter, uniform_filter1d

from .boxes import BoundingBox
from .samples import LabeledImage, VideoFrame

GENERATOR_VERSION = "1"
SCHEMA_VERSION = 1


class SceneStyle(enum.Enum):
    REPORT = "report"
    VIDEO = "video"


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to render one scene deterministically."""

    seed: int
    style: SceneStyle
    height: int = 64
    width: int = 64
    targets: int = 1
    # video only
    n_frames: int = 1
    jitter: float = 1.5  # max camera translation per frame, pixels
    # appearance knobs (the domain-gap parameters)
    target_scale: float = 1.0
    vignette: float = 0.0
    tint: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    blur_len: int = 0
    brightness: float = 1.0
    noise_amp: float = 0.12
    noise_smooth: float = 5.0
    # target-like low-contrast blobs in the (video) background
    distractors: int = 0
    # opacity of composited targets (video targets sit under a fluid film)
    target_alpha: float = 1.0

    def __post_init__(self):
        if self.targets < 0:
            raise ValueError("targets must be >= 0")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if self.style is SceneStyle.REPORT and self.n_frames != 1:
            raise ValueError("REPORT scenes are single images")


# camera walk stays within this many pixels of the scene origin
_CAMERA_RANGE = 6


@dataclass
class _Target:
    cx: float
    cy: float
    a: float
    b: float
    theta: float
    color: np.ndarray
    tex_freq: Tuple[float, float]
    tex_phase: Tuple[float, float]
    flat: bool = False  # no rim shading or texture (distractors)

    @property
    def half_extent(self) -> Tuple[float, float]:
        hw = math.sqrt((self.a * math.cos(self.theta)) ** 2 + (self.b * math.sin(self.theta)) ** 2)
        hh = math.sqrt((self.a * math.sin(self.theta)) ** 2 + (self.b * math.cos(self.theta)) ** 2)
        return hw, hh

    def box(self, height: int, width: int, dx: float = 0.0, dy: float = 0.0) -> Optional[BoundingBox]:
        hw, hh = self.half_extent
        cx, cy = float(self.cx - dx), float(self.cy - dy)
        x1, x2 = max(0.0, cx - hw), min(float(width), cx + hw)
        y1, y2 = max(0.0, cy - hh), min(float(height), cy + hh)
        if x2 - x1 < 1.0 or y2 - y1 < 1.0:
            return None
        return BoundingBox(x1, y1, x2, y2)


def _sample_targets(rng: np.random.Generator, spec: SceneSpec) -> List[_Target]:
    targets = []
    for _ in range(spec.targets):
        theta = float(rng.uniform(0.0, math.pi))
        a = float(rng.uniform(7.0, 13.0)) * spec.target_scale
        b = a * float(rng.uniform(0.65, 0.95))
        color = np.array(
            [rng.uniform(0.42, 0.58), rng.uniform(0.16, 0.28), rng.uniform(0.14, 0.26)]
        )
        tex_freq = (float(rng.uniform(0.6, 1.4)), float(rng.uniform(0.6, 1.4)))
        tex_phase = (float(rng.uniform(0, 2 * math.pi)), float(rng.uniform(0, 2 * math.pi)))
        t = _Target(0.0, 0.0, a, b, theta, color, tex_freq, tex_phase)
        hw, hh = t.half_extent
        if spec.style is SceneStyle.REPORT:
            # fully inside the frame, biased toward the center
            mx = min(hw + 2.0, spec.width / 2 - 1)
            my = min(hh + 2.0, spec.height / 2 - 1)
            t.cx = float(rng.uniform(mx, spec.width - mx))
            t.cy = float(rng.uniform(my, spec.height - my))
        else:
            # keep the target visible under the worst-case camera offset;
            # the walk still moves it off-center within the view
            mx = min(hw + 2.0 + _CAMERA_RANGE, spec.width / 2 - 1)
            my = min(hh + 2.0 + _CAMERA_RANGE, spec.height / 2 - 1)
            t.cx = float(rng.uniform(mx, spec.width - mx))
            t.cy = float(rng.uniform(my, spec.height - my))
        targets.append(t)
    return targets


def _sample_distractors(
    rng: np.random.Generator, spec: SceneSpec, height: int, width: int
) -> List[_Target]:
    """Target-shaped confusers with a hue shifted away from real targets.

    Shape, shading, and texture match the targets, so a detector that has
    never seen them fires on them; the color difference is the one cue
    that separates them, and it survives pixel blending."""
    blobs = []
    for _ in range(spec.distractors):
        theta = float(rng.uniform(0.0, math.pi))
        a = float(rng.uniform(7.0, 12.0))
        b = a * float(rng.uniform(0.65, 0.95))
        color = np.array(
            [rng.uniform(0.30, 0.42), rng.uniform(0.16, 0.26), rng.uniform(0.40, 0.55)]
        )
        tex_freq = (float(rng.uniform(0.6, 1.4)), float(rng.uniform(0.6, 1.4)))
        tex_phase = (float(rng.uniform(0, 2 * math.pi)), float(rng.uniform(0, 2 * math.pi)))
        blobs.append(
            _Target(
                float(rng.uniform(4.0, width - 4.0)),
                float(rng.uniform(4.0, height - 4.0)),
                a,
                b,
                theta,
                color,
                tex_freq,
                tex_phase,
            )
        )
    return blobs


def _background(rng: np.random.Generator, spec: SceneSpec, height: int, width: int) -> np.ndarray:
    base = np.array([0.76, 0.56, 0.52]) + rng.uniform(-0.04, 0.04, size=3)
    noise = gaussian_filter(rng.standard_normal((height, width)), spec.noise_smooth)
    scale = noise.std()
    if scale > 0:
        noise = noise / scale * spec.noise_amp
    weights = np.array([1.0, 0.8, 0.7])
    return np.clip(base[None, None, :] + noise[:, :, None] * weights, 0.0, 1.0)


def _composite_targets(
    frame: np.ndarray,
    targets: Sequence[_Target],
    dx: float,
    dy: float,
    edge: float,
    alpha_cap: float = 1.0,
) -> np.ndarray:
    h, w = frame.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    out = frame
    for t in targets:
        u = xs - (t.cx - dx)
        v = ys - (t.cy - dy)
        ru = u * math.cos(t.theta) + v * math.sin(t.theta)
        rv = -u * math.sin(t.theta) + v * math.cos(t.theta)
        q = (ru / t.a) ** 2 + (rv / t.b) ** 2
        alpha = np.clip((1.0 - q) / edge + 0.5, 0.0, 1.0) * alpha_cap
        if t.flat:
            shade = np.ones_like(q)
            tex = 1.0
        else:
            shade = 1.0 - 0.35 * q  # darker rim, brighter core
            tex = 1.0 + 0.18 * np.sin(u * t.tex_freq[0] + t.tex_phase[0]) * np.sin(
                v * t.tex_freq[1] + t.tex_phase[1]
            )
        body = np.clip(t.color[None, None, :] * (shade * tex)[:, :, None], 0.0, 1.0)
        out = out * (1.0 - alpha[:, :, None]) + body * alpha[:, :, None]
    return out


def _finish_video_frame(frame: np.ndarray, spec: SceneSpec) -> np.ndarray:
    out = frame
    if spec.blur_len > 1:
        out = uniform_filter1d(out, size=spec.blur_len, axis=1, mode="nearest")
    if spec.vignette > 0:
        h, w = out.shape[:2]
        ys, xs = np.mgrid[0:h, 0:w].astype(float)
        r2 = ((xs - w / 2) / (w / 2)) ** 2 + ((ys - h / 2) / (h / 2)) ** 2
        out = out * (1.0 - spec.vignette * r2 / 2.0)[:, :, None]
    out = out * (np.asarray(spec.tint)[None, None, :] * spec.brightness)
    return np.clip(out, 0.0, 1.0)


def target_tight_box(t: _Target, height: int, width: int) -> Optional[BoundingBox]:
    """Analytic tight box of a (possibly rotated) elliptical target."""
    return t.box(height, width)


def gen_report_image(spec: SceneSpec) -> LabeledImage:
    """Render a labeled report-style still with one tight box per target."""
    if spec.style is not SceneStyle.REPORT:
        raise ValueError("spec.style must be REPORT")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xA1]))
    targets = _sample_targets(rng, spec)
    frame = _background(rng, spec, spec.height, spec.width)
    if spec.distractors:
        blobs = _sample_distractors(rng, spec, spec.height, spec.width)
        frame = _composite_targets(frame, blobs, 0.0, 0.0, edge=0.25)
    frame = _composite_targets(frame, targets, 0.0, 0.0, edge=0.08)
    boxes = []
    for t in targets:
        box = t.box(spec.height, spec.width)
        if box is not None:
            boxes.append(box)
    return LabeledImage(pixels=np.clip(frame, 0.0, 1.0), boxes=tuple(boxes))


def gen_video(spec: SceneSpec) -> Tuple[List[VideoFrame], List[Tuple[BoundingBox, ...]]]:
    """Render a video as frames plus per-frame boxes (empty for negatives).

    The background and targets live on a canvas larger than the view; a
    bounded random camera walk of at most `jitter` pixels per frame moves
    the crop, so adjacent frames stay nearly identical.
    """
    if spec.style is not SceneStyle.VIDEO:
        raise ValueError("spec.style must be VIDEO")
    if spec.n_frames < 3:
        raise ValueError("videos need n_frames >= 3 (frame triples)")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xB2]))
    margin = _CAMERA_RANGE
    # +1 row/col so a fractional crop at the extreme offset stays in range
    canvas_h = spec.height + 2 * margin + 1
    canvas_w = spec.width + 2 * margin + 1
    canvas = _background(rng, spec, canvas_h, canvas_w)
    distractors = _sample_distractors(rng, spec, canvas_h, canvas_w)
    canvas = _composite_targets(canvas, distractors, 0.0, 0.0, edge=0.25)
    targets = _sample_targets(rng, spec)
    for t in targets:  # canvas coordinates
        t.cx += margin
        t.cy += margin

    # camera walk, clipped to the canvas margin
    steps = rng.uniform(-spec.jitter, spec.jitter, size=(spec.n_frames, 2))
    offsets = np.zeros((spec.n_frames, 2))
    pos = np.zeros(2)
    for i in range(spec.n_frames):
        if i > 0:
            pos = np.clip(pos + steps[i], -margin, margin)
        offsets[i] = pos

    video_id = f"vid{spec.seed}"
    frames: List[VideoFrame] = []
    boxes_per_frame: List[Tuple[BoundingBox, ...]] = []
    for i in range(spec.n_frames):
        ox, oy = margin + offsets[i, 0], margin + offsets[i, 1]
        view = _crop_subpixel(canvas, oy, ox, spec.height, spec.width)
        view = _composite_targets(view, targets, ox, oy, edge=0.25, alpha_cap=spec.target_alpha)
        view = _finish_video_frame(view, spec)
        frames.append(VideoFrame(pixels=view, frame_index=i, source_video=video_id))
        boxes = []
        for t in targets:
            box = t.box(spec.height, spec.width, dx=ox, dy=oy)
            if box is not None:
                boxes.append(box)
        boxes_per_frame.append(tuple(boxes))
    return frames, boxes_per_frame


def _crop_subpixel(canvas: np.ndarray, oy: float, ox: float, h: int, w: int) -> np.ndarray:
    """Bilinear crop of an h x w window whose origin may be fractional."""
    y0, x0 = int(math.floor(oy)), int(math.floor(ox))
    fy, fx = oy - y0, ox - x0
    block = canvas[y0 : y0 + h + 1, x0 : x0 + w + 1]
    top = block[:h, :w] * (1 - fx) + block[:h, 1 : w + 1] * fx
    bot = block[1 : h + 1, :w] * (1 - fx) + block[1 : h + 1, 1 : w + 1] * fx
    return top * (1 - fy) + bot * fy


# --- corpus ------------------------------------------------------------------

# proportions of the reference image split (train 2456 : test 600)
_SPLIT_TRAIN, _SPLIT_TEST = 2456, 600


def split_counts(total_images: int) -> Tuple[int, int]:
    """(train, test) counts mirroring the reference 2456:600 proportions."""
    n_test = (total_images * _SPLIT_TEST) // (_SPLIT_TRAIN + _SPLIT_TEST)
    return total_images - n_test, n_test


@dataclass(frozen=True)
class CorpusConfig:
    seed: int = 0
    images: int = 2000
    neg_videos: int = 10
    pos_videos: int = 5
    frames_per_neg: int = 600
    frames_per_pos: int = 200
    height: int = 64
    width: int = 64
    jitter: float = 1.5
    # video-domain appearance shift
    video_target_scale: float = 1.0
    vignette: float = 0.2
    tint: Tuple[float, float, float] = (1.0, 0.9, 0.88)
    blur_len: int = 2
    brightness: float = 0.95
    video_distractors: int = 3
    video_target_alpha: float = 0.65

    def __post_init__(self):
        if self.images < 10:
            raise ValueError("need at least 10 report images")
        if self.neg_videos < 1 or self.pos_videos < 1:
            raise ValueError("need at least one negative and one positive video")
        if self.frames_per_neg < 3 or self.frames_per_pos < 3:
            raise ValueError("videos need at least 3 frames")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["tint"] = list(self.tint)
        return d

    @staticmethod
    def from_dict(d: dict) -> "CorpusConfig":
        d = dict(d)
        if "tint" in d:
            d["tint"] = tuple(d["tint"])
        unknown = set(d) - set(CorpusConfig.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown corpus config keys: {sorted(unknown)}")
        return CorpusConfig(**d)


def _save_png(pixels: np.ndarray, path: Path) -> None:
    arr = np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _image_spec(config: CorpusConfig, index: int, targets: int) -> SceneSpec:
    return SceneSpec(
        seed=index,
        style=SceneStyle.REPORT,
        height=config.height,
        width=config.width,
        targets=targets,
    )


def _video_spec(config: CorpusConfig, seed: int, positive: bool, n_frames: int) -> SceneSpec:
    return SceneSpec(
        seed=seed,
        style=SceneStyle.VIDEO,
        height=config.height,
        width=config.width,
        targets=1 if positive else 0,
        n_frames=n_frames,
        jitter=config.jitter,
        target_scale=config.video_target_scale,
        vignette=config.vignette,
        tint=config.tint,
        blur_len=config.blur_len,
        brightness=config.brightness,
        distractors=config.video_distractors,
        target_alpha=config.video_target_alpha,
    )


def gen_corpus(config: CorpusConfig, out_dir) -> dict:
    """Write a full corpus to disk and return its manifest.

    Layout: images/{train,test}/*.png, videos/<id>/frame_%06d.png, and
    manifest.json at the root.  Fully determined by (config, generator
    version); per-item seeds are derived from the corpus seed and the
    item index so parallel generation would produce identical output.
    """
    root = Path(out_dir)
    try:
        (root / "images" / "train").mkdir(parents=True, exist_ok=True)
        (root / "images" / "test").mkdir(parents=True, exist_ok=True)
        (root / "videos").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOError(f"cannot create corpus directory {root}: {exc}") from exc

    n_train, n_test = split_counts(config.images)
    count_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xC0]))
    target_counts = count_rng.choice([1, 1, 1, 2], size=config.images)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "generator_version": GENERATOR_VERSION,
        "seed": config.seed,
        "config": config.to_dict(),
        "items": {"image-train": [], "image-test": [], "video-train": [], "video-test": []},
    }

    for i in range(config.images):
        spec = _image_spec(config, _item_seed(config.seed, "image", i), int(target_counts[i]))
        image = gen_report_image(spec)
        split = "train" if i < n_train else "test"
        rel = f"images/{split}/img_{i:05d}.png"
        _save_png(image.pixels, root / rel)
        manifest["items"][f"image-{split}"].append(
            {"path": rel, "boxes": [list(b.as_tuple()) for b in image.boxes]}
        )

    for v in range(config.neg_videos):
        vid = f"neg_{v:02d}"
        spec = _video_spec(config, _item_seed(config.seed, "neg", v), False, config.frames_per_neg)
        frames, _ = gen_video(spec)
        vdir = root / "videos" / vid
        vdir.mkdir(exist_ok=True)
        paths = []
        for frame in frames:
            rel = f"videos/{vid}/frame_{frame.frame_index:06d}.png"
            _save_png(frame.pixels, root / rel)
            paths.append(rel)
        manifest["items"]["video-train"].append(
            {"video_id": vid, "n_frames": len(paths), "frames": paths}
        )

    for v in range(config.pos_videos):
        vid = f"pos_{v:02d}"
        spec = _video_spec(config, _item_seed(config.seed, "pos", v), True, config.frames_per_pos)
        frames, boxes_per_frame = gen_video(spec)
        vdir = root / "videos" / vid
        vdir.mkdir(exist_ok=True)
        for frame, boxes in zip(frames, boxes_per_frame):
            rel = f"videos/{vid}/frame_{frame.frame_index:06d}.png"
            _save_png(frame.pixels, root / rel)
            if boxes:  # only frames with a visible target become test items
                manifest["items"]["video-test"].append(
                    {"path": rel, "boxes": [list(b.as_tuple()) for b in boxes]}
                )

    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest


def _item_seed(corpus_seed: int, kind: str, index: int) -> int:
    kind_id = {"image": 1, "neg": 2, "pos": 3}[kind]
    return (corpus_seed * 1_000_003 + kind_id * 100_000 + index) & 0x7FFFFFFF
