"""Reference single-frame detector.

A small convolutional encoder with frozen normalization plus a one-scale
anchor head (objectness + box offsets).  It stands in for a full
two-stage detector at desk scale; anything exposing the same
encode / detection_loss / predict surface can be swapped in.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .boxes import BoundingBox
from .tcr import FeatureMap


@dataclass(frozen=True)
class DetectorConfig:
    input_channels: int = 3
    feature_channels: int = 32
    feature_stride: int = 8
    anchor_sizes: Tuple[Tuple[float, float], ...] = (
        (12.0, 12.0),
        (20.0, 20.0),
        (28.0, 28.0),
    )
    score_threshold: float = 0.05
    nms_iou: float = 0.5
    # anchor assignment thresholds (IoU vs ground truth)
    positive_iou: float = 0.5
    negative_iou: float = 0.3

    def __post_init__(self):
        if self.input_channels < 1 or self.feature_channels < 1:
            raise ValueError("channel counts must be >= 1")
        stride = self.feature_stride
        if stride < 1 or (stride & (stride - 1)) != 0:
            raise ValueError(f"feature_stride must be a positive power of 2, got {stride}")
        if not self.anchor_sizes:
            raise ValueError("at least one anchor size required")
        for w, h in self.anchor_sizes:
            if w <= 0 or h <= 0:
                raise ValueError(f"bad anchor size ({w}, {h})")
        if not (0.0 <= self.score_threshold <= 1.0):
            raise ValueError("score_threshold must be in [0, 1]")
        if not (0.0 < self.nms_iou <= 1.0):
            raise ValueError("nms_iou must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "feature_channels": self.feature_channels,
            "feature_stride": self.feature_stride,
            "anchor_sizes": [list(a) for a in self.anchor_sizes],
            "score_threshold": self.score_threshold,
            "nms_iou": self.nms_iou,
            "positive_iou": self.positive_iou,
            "negative_iou": self.negative_iou,
        }

    @staticmethod
    def from_dict(d: dict) -> "DetectorConfig":
        d = dict(d)
        if "anchor_sizes" in d:
            d["anchor_sizes"] = tuple(tuple(float(v) for v in a) for a in d["anchor_sizes"])
        known = set(DetectorConfig.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown detector config keys: {sorted(unknown)}")
        return DetectorConfig(**d)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    score: float


class FrozenNorm(nn.Module):
    """Per-channel normalization with statistics fixed at construction."""

    def __init__(self, channels: int):
        super().__init__()
        self.register_buffer("mean", torch.zeros(channels))
        self.register_buffer("var", torch.ones(channels))
        self.register_buffer("weight", torch.ones(channels))
        self.register_buffer("bias", torch.zeros(channels))
        self.eps = 1e-5

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        shape = (1, -1, 1, 1)
        scale = self.weight * (self.var + self.eps).rsqrt()
        return (x - self.mean.view(shape)) * scale.view(shape) + self.bias.view(shape)


class TinyDetector(nn.Module):
    """Stride-2 conv stages down to the configured feature stride, then a
    1x1 anchor head predicting objectness and box deltas."""

    def __init__(self, config: DetectorConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        n_stages = int(round(math.log2(config.feature_stride)))
        stages = []
        in_ch = config.input_channels
        for i in range(n_stages):
            out_ch = min(config.feature_channels, 16 * (2 ** i))
            if i == n_stages - 1:
                out_ch = config.feature_channels
            stages.append(nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1))
            stages.append(FrozenNorm(out_ch))
            stages.append(nn.ReLU())
            in_ch = out_ch
        self.encoder = nn.Sequential(*stages)
        n_anchors = len(config.anchor_sizes)
        self.head = nn.Conv2d(config.feature_channels, n_anchors * 5, 1)
        self.to(dtype)

    def forward(self, images: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        features = self.encoder(images)
        return features, self.head(features)


@dataclass
class DetectorState:
    model: TinyDetector
    config: DetectorConfig
    epoch: int = 0
    step: int = 0

    @property
    def dtype(self) -> torch.dtype:
        return next(self.model.parameters()).dtype


def build_detector(
    config: DetectorConfig, seed: int, dtype: torch.dtype = torch.float32
) -> DetectorState:
    """Deterministically initialized detector for the given seed."""
    model = TinyDetector(config, dtype=dtype)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, param in model.named_parameters():
            if param.dim() >= 2:
                fan_in = param[0].numel()
                bound = math.sqrt(6.0 / fan_in)
                param.uniform_(-bound, bound, generator=gen)
            else:
                param.zero_()
        # bias the objectness logits toward background at the start
        n_anchors = len(config.anchor_sizes)
        head_bias = model.head.bias.view(n_anchors, 5)
        head_bias[:, 0] = -2.0
    return DetectorState(model=model, config=config)


def _to_tensor(pixels, state: DetectorState) -> torch.Tensor:
    """H x W x C numpy grid (or tensor) -> 1 x C x H x W tensor."""
    if isinstance(pixels, torch.Tensor):
        t = pixels
    else:
        t = torch.from_numpy(np.ascontiguousarray(pixels))
    if t.dim() != 3:
        raise ValueError(f"expected H x W x C input, got shape {tuple(t.shape)}")
    return t.permute(2, 0, 1).unsqueeze(0).to(state.dtype)


def _check_divisible(h: int, w: int, stride: int):
    if h % stride or w % stride:
        raise ValueError(f"input {h}x{w} not divisible by stride {stride}")


def encode(state: DetectorState, image_pixels) -> FeatureMap:
    """Encoder feature map (channels x H/stride x W/stride) for one image.

    This is also the feature the temporal regularizer operates on.
    """
    t = _to_tensor(image_pixels, state)
    _check_divisible(t.shape[2], t.shape[3], state.config.feature_stride)
    features, _ = state.model(t)
    return features[0]


def anchor_grid(config: DetectorConfig, image_h: int, image_w: int) -> torch.Tensor:
    """All anchors for an image, as an (h*w*A, 4) xyxy tensor."""
    stride = config.feature_stride
    fh, fw = image_h // stride, image_w // stride
    cy = (torch.arange(fh, dtype=torch.float64) + 0.5) * stride
    cx = (torch.arange(fw, dtype=torch.float64) + 0.5) * stride
    sizes = torch.tensor(config.anchor_sizes, dtype=torch.float64)  # (A, 2)
    cyy, cxx = torch.meshgrid(cy, cx, indexing="ij")
    centers = torch.stack([cxx, cyy], dim=-1).reshape(-1, 1, 2)  # (h*w, 1, 2)
    half = sizes.view(1, -1, 2) / 2
    mins = centers - half
    maxs = centers + half
    return torch.cat([mins, maxs], dim=-1).reshape(-1, 4)


def _iou_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise IoU between (N, 4) and (M, 4) xyxy boxes."""
    lt = torch.maximum(a[:, None, :2], b[None, :, :2])
    rb = torch.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clamp_min(0)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def assign_anchors(
    config: DetectorConfig, anchors: torch.Tensor, gt: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Anchor labels (1 positive, 0 negative, -1 ignore) and per-anchor
    matched ground-truth index.

    Positives are anchors with IoU >= positive_iou against some box, plus
    the best anchor of every box; anchors below negative_iou are negatives.
    """
    n = anchors.shape[0]
    labels = torch.zeros(n, dtype=torch.long)
    matched = torch.zeros(n, dtype=torch.long)
    if gt.shape[0] == 0:
        return labels, matched
    iou = _iou_matrix(anchors, gt)
    best_iou, best_gt = iou.max(dim=1)
    labels[best_iou >= config.positive_iou] = 1
    labels[(best_iou >= config.negative_iou) & (best_iou < config.positive_iou)] = -1
    # force-match the best anchor for every ground-truth box
    best_anchor = iou.argmax(dim=0)
    labels[best_anchor] = 1
    matched = best_gt
    matched[best_anchor] = torch.arange(gt.shape[0])
    return labels, matched


def _boxes_to_tensor(boxes: Sequence[BoundingBox]) -> torch.Tensor:
    if not boxes:
        return torch.zeros((0, 4), dtype=torch.float64)
    return torch.tensor([b.as_tuple() for b in boxes], dtype=torch.float64)


def _encode_deltas(anchors: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    acx = (anchors[:, 0] + anchors[:, 2]) / 2
    acy = (anchors[:, 1] + anchors[:, 3]) / 2
    gw = gt[:, 2] - gt[:, 0]
    gh = gt[:, 3] - gt[:, 1]
    gcx = (gt[:, 0] + gt[:, 2]) / 2
    gcy = (gt[:, 1] + gt[:, 3]) / 2
    return torch.stack(
        [(gcx - acx) / aw, (gcy - acy) / ah, torch.log(gw / aw), torch.log(gh / ah)],
        dim=1,
    )


def _decode_deltas(anchors: torch.Tensor, deltas: torch.Tensor) -> torch.Tensor:
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    acx = (anchors[:, 0] + anchors[:, 2]) / 2
    acy = (anchors[:, 1] + anchors[:, 3]) / 2
    cx = acx + deltas[:, 0] * aw
    cy = acy + deltas[:, 1] * ah
    w = aw * deltas[:, 2].clamp(-4, 4).exp()
    h = ah * deltas[:, 3].clamp(-4, 4).exp()
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=1)


def _head_to_anchor_layout(raw: torch.Tensor, n_anchors: int) -> torch.Tensor:
    """(A*5, h, w) head output -> (h*w*A, 5), matching anchor_grid order."""
    _, h, w = raw.shape
    return raw.view(n_anchors, 5, h, w).permute(2, 3, 0, 1).reshape(-1, 5)


def detection_loss_batch(
    state: DetectorState,
    images: torch.Tensor,
    boxes_per_image: Sequence[Sequence[BoundingBox]],
) -> torch.Tensor:
    """Mean per-image detection loss over a batch.

    Per image: binary cross-entropy on objectness over positive and
    negative anchors, plus smooth-L1 on box deltas for positive anchors
    normalized by the positive count.  With no boxes the regression term
    is exactly zero.
    """
    cfg = state.config
    b, _, img_h, img_w = images.shape
    _check_divisible(img_h, img_w, cfg.feature_stride)
    if len(boxes_per_image) != b:
        raise ValueError("boxes_per_image length must match the batch")
    for boxes in boxes_per_image:
        for box in boxes:
            if box.x_min < 0 or box.y_min < 0 or box.x_max > img_w or box.y_max > img_h:
                raise ValueError(f"box {box.as_tuple()} outside {img_h}x{img_w} image")
    _, raw = state.model(images)
    anchors = anchor_grid(cfg, img_h, img_w)
    n_anchors = len(cfg.anchor_sizes)
    losses = []
    for i in range(b):
        pred = _head_to_anchor_layout(raw[i], n_anchors)
        gt = _boxes_to_tensor(boxes_per_image[i])
        labels, matched = assign_anchors(cfg, anchors, gt)
        pos = labels == 1
        neg = labels == 0
        # balance the few positive anchors against the many negatives
        cls_loss = pred.sum() * 0.0
        if int(neg.sum()) > 0:
            cls_loss = cls_loss + nn.functional.binary_cross_entropy_with_logits(
                pred[neg, 0], torch.zeros(int(neg.sum()), dtype=pred.dtype)
            )
        if int(pos.sum()) > 0:
            cls_loss = cls_loss + nn.functional.binary_cross_entropy_with_logits(
                pred[pos, 0], torch.ones(int(pos.sum()), dtype=pred.dtype)
            )
        n_pos = int(pos.sum())
        if n_pos > 0:
            target = _encode_deltas(anchors[pos], gt[matched[pos]]).to(pred.dtype)
            reg_loss = nn.functional.smooth_l1_loss(
                pred[pos, 1:], target, reduction="sum"
            ) / n_pos
        else:
            reg_loss = pred.sum() * 0.0
        losses.append(cls_loss + reg_loss)
    return torch.stack(losses).mean()


def detection_loss(
    state: DetectorState, image_pixels, boxes: Sequence[BoundingBox]
) -> torch.Tensor:
    """Detection loss for a single image (differentiable scalar tensor)."""
    return detection_loss_batch(state, _to_tensor(image_pixels, state), [boxes])


def _greedy_nms(boxes: torch.Tensor, scores: torch.Tensor, iou_thresh: float) -> List[int]:
    order = torch.argsort(scores, descending=True, stable=True)
    keep: List[int] = []
    suppressed = torch.zeros(len(scores), dtype=torch.bool)
    for idx in order.tolist():
        if suppressed[idx]:
            continue
        keep.append(idx)
        ious = _iou_matrix(boxes[idx : idx + 1], boxes)[0]
        suppressed |= ious >= iou_thresh
        suppressed[idx] = True
    return keep


def predict(state: DetectorState, image_pixels) -> List[Detection]:
    """Detections strictly above score_threshold after greedy NMS,
    sorted by descending score."""
    cfg = state.config
    t = _to_tensor(image_pixels, state)
    img_h, img_w = t.shape[2], t.shape[3]
    _check_divisible(img_h, img_w, cfg.feature_stride)
    with torch.no_grad():
        _, raw = state.model(t)
        pred = _head_to_anchor_layout(raw[0], len(cfg.anchor_sizes))
        scores = torch.sigmoid(pred[:, 0]).double()
        anchors = anchor_grid(cfg, img_h, img_w)
        boxes = _decode_deltas(anchors, pred[:, 1:].double())
    mask = scores > cfg.score_threshold
    boxes, scores = boxes[mask], scores[mask]
    # discard boxes that collapse outside the image
    boxes[:, 0::2] = boxes[:, 0::2].clamp(0, img_w)
    boxes[:, 1::2] = boxes[:, 1::2].clamp(0, img_h)
    valid = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    boxes, scores = boxes[valid], scores[valid]
    keep = _greedy_nms(boxes, scores, cfg.nms_iou)
    detections = []
    for idx in keep:
        s = float(scores[idx])
        x1, y1, x2, y2 = (float(v) for v in boxes[idx])
        detections.append(Detection(box=BoundingBox(x1, y1, x2, y2, score=s), score=s))
    detections.sort(key=lambda d: -d.score)
    return detections


# --- checkpointing -----------------------------------------------------------

CHECKPOINT_FORMAT = "jointdet-checkpoint-v1"


def save_checkpoint(
    state: DetectorState,
    path,
    extra_arrays: Optional[dict] = None,
    extra_meta: Optional[dict] = None,
) -> None:
    """Serialize parameters, buffers, config, and counters to an .npz file.

    extra_arrays / extra_meta let the trainer stash optimizer state next to
    the model so a reload continues bit-exactly.
    """
    arrays = {}
    for name, tensor in state.model.state_dict().items():
        arrays[f"model/{name}"] = tensor.detach().cpu().numpy()
    if extra_arrays:
        for name, arr in extra_arrays.items():
            arrays[f"extra/{name}"] = np.asarray(arr)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": state.config.to_dict(),
        "epoch": state.epoch,
        "step": state.step,
        "dtype": str(state.dtype).replace("torch.", ""),
        "extra": extra_meta or {},
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Tuple[DetectorState, dict, dict]:
    """Inverse of save_checkpoint.

    Returns (state, extra_arrays, extra_meta); the round trip is bit-exact.
    """
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a {CHECKPOINT_FORMAT} file: {path}")
        config = DetectorConfig.from_dict(meta["config"])
        dtype = getattr(torch, meta["dtype"])
        model = TinyDetector(config, dtype=dtype)
        state_dict = {}
        extra = {}
        for key in data.files:
            if key.startswith("model/"):
                state_dict[key[len("model/"):]] = torch.from_numpy(data[key].copy())
            elif key.startswith("extra/"):
                extra[key[len("extra/"):]] = data[key].copy()
        model.load_state_dict(state_dict)
    state = DetectorState(
        model=model, config=config, epoch=int(meta["epoch"]), step=int(meta["step"])
    )
    return state, extra, meta.get("extra", {})
