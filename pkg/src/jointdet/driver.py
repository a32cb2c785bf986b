"""Training loop and experiment matrix.

Four arms are supported: BASE (supervised only), MIXUP (supervised on
blended samples), TCR (supervised plus temporal regularization on frame
triples), and MIXUP_TCR (both).  One optimizer step is taken per joint
batch, with the supervised and regularization losses summed before
backpropagation.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import yaml

from .datapipe import CorpusDataset, batches_per_epoch, joint_batches, load_manifest
from .detector import (
    DetectorConfig,
    DetectorState,
    build_detector,
    detection_loss_batch,
    load_checkpoint,
    save_checkpoint,
)
from .evalkit import evaluate_detector
from .mixup import MixupConfig
from .tcr import combined_loss, estimate_midframe, tcr_loss


class Arm(enum.Enum):
    BASE = "base"
    MIXUP = "mixup"
    TCR = "tcr"
    MIXUP_TCR = "mixup_tcr"

    @property
    def uses_mixup(self) -> bool:
        return self in (Arm.MIXUP, Arm.MIXUP_TCR)

    @property
    def uses_tcr(self) -> bool:
        return self in (Arm.TCR, Arm.MIXUP_TCR)


@dataclass(frozen=True)
class TrainingConfig:
    arm: Arm = Arm.BASE
    epochs: int = 10
    # (epoch, learning rate) pairs; the full-scale schedule is
    # full_scale_schedule(): 1e-2 @ 0, 1e-3 @ 16, 1e-4 @ 22 over 26 epochs
    lr_milestones: Tuple[Tuple[int, float], ...] = ((0, 1e-2), (6, 1e-3), (8, 1e-4))
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 8
    triple_batch_size: int = 8
    gamma: float = 0.01
    mixup: MixupConfig = field(default_factory=lambda: MixupConfig.discrete(c=0.5, p=0.2))
    flip_probability: float = 0.5
    seed: int = 0
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr_milestones or self.lr_milestones[0][0] != 0:
            raise ValueError("first lr milestone must be at epoch 0")
        epochs_seq = [e for e, _ in self.lr_milestones]
        if any(a >= b for a, b in zip(epochs_seq, epochs_seq[1:])):
            raise ValueError("lr milestones must be strictly increasing in epoch")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not (0.0 <= self.flip_probability <= 1.0):
            raise ValueError("flip_probability must be in [0, 1]")
        if self.batch_size < 1 or self.triple_batch_size < 0:
            raise ValueError("bad batch sizes")

    def to_dict(self) -> dict:
        return {
            "arm": self.arm.value,
            "epochs": self.epochs,
            "lr_milestones": [list(m) for m in self.lr_milestones],
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "triple_batch_size": self.triple_batch_size,
            "gamma": self.gamma,
            "mixup": self.mixup.to_dict(),
            "flip_probability": self.flip_probability,
            "seed": self.seed,
            "detector": self.detector.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainingConfig":
        d = dict(d)
        unknown = set(d) - set(TrainingConfig.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        if "arm" in d:
            d["arm"] = Arm(d["arm"])
        if "lr_milestones" in d:
            d["lr_milestones"] = tuple(
                (int(e), float(lr)) for e, lr in d["lr_milestones"]
            )
        if "mixup" in d and isinstance(d["mixup"], dict):
            d["mixup"] = MixupConfig.from_dict(d["mixup"])
        if "detector" in d and isinstance(d["detector"], dict):
            d["detector"] = DetectorConfig.from_dict(d["detector"])
        return TrainingConfig(**d)

    @staticmethod
    def load(path) -> "TrainingConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"config file {path} must hold a mapping")
        return TrainingConfig.from_dict(data)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def full_scale_schedule(config: Optional[TrainingConfig] = None) -> TrainingConfig:
    """The full-scale schedule: 26 epochs, lr 1e-2 / 1e-3 @16 / 1e-4 @22."""
    base = config or TrainingConfig()
    return replace(base, epochs=26, lr_milestones=((0, 1e-2), (16, 1e-3), (22, 1e-4)))


def lr_at(config: TrainingConfig, epoch: int) -> float:
    """Learning rate of the last milestone at or before the given epoch."""
    if not (0 <= epoch < config.epochs):
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    lr = config.lr_milestones[0][1]
    for ep, value in config.lr_milestones:
        if ep <= epoch:
            lr = value
    return lr


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, record: "RunRecord"):
        super().__init__(message)
        self.record = record


@dataclass
class EpochStats:
    epoch: int
    lr: float
    mean_det_loss: float
    mean_reg_loss: float
    mean_combined_loss: float
    ap_image_test: Optional[float]
    ap_video_test: Optional[float]
    seconds: float


@dataclass
class RunRecord:
    config: dict
    epochs: List[EpochStats] = field(default_factory=list)
    step_det_losses: List[float] = field(default_factory=list)
    step_reg_losses: List[float] = field(default_factory=list)
    step_combined_losses: List[float] = field(default_factory=list)
    final_checkpoint: Optional[str] = None
    wall_clock: float = 0.0

    @property
    def final_ap_image_test(self) -> Optional[float]:
        return self.epochs[-1].ap_image_test if self.epochs else None

    @property
    def final_ap_video_test(self) -> Optional[float]:
        return self.epochs[-1].ap_video_test if self.epochs else None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "epochs": [vars(e) for e in self.epochs],
            "step_det_losses": self.step_det_losses,
            "step_reg_losses": self.step_reg_losses,
            "step_combined_losses": self.step_combined_losses,
            "final_checkpoint": self.final_checkpoint,
            "wall_clock": self.wall_clock,
        }

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def _samples_to_tensor(samples, dtype) -> torch.Tensor:
    arr = np.stack([s.pixels for s in samples])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).to(dtype)


def _triples_to_tensor(triples, dtype) -> torch.Tensor:
    arr = np.stack(
        [np.stack([t.prev.pixels, t.mid.pixels, t.next.pixels]) for t in triples]
    )  # (B_t, 3, H, W, C)
    return torch.from_numpy(arr).permute(0, 1, 4, 2, 3).to(dtype)


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def _momentum_arrays(model, optimizer) -> Dict[str, np.ndarray]:
    arrays = {}
    for name, param in model.named_parameters():
        buf = optimizer.state.get(param, {}).get("momentum_buffer")
        if buf is not None:
            arrays[f"momentum/{name}"] = buf.detach().cpu().numpy()
    return arrays


def _restore_momentum(model, optimizer, arrays: Dict[str, np.ndarray]) -> None:
    for name, param in model.named_parameters():
        key = f"momentum/{name}"
        if key in arrays:
            optimizer.state[param] = {
                "momentum_buffer": torch.from_numpy(arrays[key].copy()).to(param.dtype)
            }


def train(
    config: TrainingConfig,
    corpus,
    out_dir=None,
    max_steps: Optional[int] = None,
    eval_every: int = 1,
    resume_from=None,
) -> RunRecord:
    """Train one arm on a corpus and return the run record.

    corpus may be a path or an already loaded CorpusDataset.  eval_every
    controls how often (in epochs) the two test splits are scored; 0
    scores only after the final epoch.  resume_from restarts from a
    checkpoint written by a previous call with the same config.
    """
    dataset = corpus if isinstance(corpus, CorpusDataset) else load_manifest(corpus)
    needs_video = config.arm.uses_mixup or config.arm.uses_tcr
    if needs_video and len(dataset.video_train) == 0:
        raise ValueError(f"arm {config.arm.value} requires a nonempty video-train split")

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        state, extra, _meta = load_checkpoint(resume_from)
        start_epoch = state.epoch
    else:
        state = build_detector(config.detector, seed=config.seed)
        extra = {}
        start_epoch = 0

    optimizer = torch.optim.SGD(
        state.model.parameters(),
        lr=lr_at(config, min(start_epoch, config.epochs - 1)),
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    _restore_momentum(state.model, optimizer, extra)

    # the supervised stream always goes through the mixup pipeline; the
    # non-mixup arms use the identity config, which keeps the random
    # stream aligned with the mixup arms
    pipeline_mixup = config.mixup if config.arm.uses_mixup else MixupConfig.identity()
    triple_batch = config.triple_batch_size if config.arm.uses_tcr else 0
    gamma = config.gamma if config.arm.uses_tcr else 0.0

    record = RunRecord(config=config.to_dict())
    t_start = time.monotonic()
    steps_done = 0
    epoch_det: List[float] = []
    epoch_reg: List[float] = []
    epoch_comb: List[float] = []
    epoch_t0 = time.monotonic()
    current_epoch = start_epoch
    _set_lr(optimizer, lr_at(config, min(start_epoch, config.epochs - 1)))

    def finish_epoch(epoch: int):
        nonlocal epoch_det, epoch_reg, epoch_comb, epoch_t0
        do_eval = (eval_every and (epoch + 1) % eval_every == 0) or epoch == config.epochs - 1
        ap_img = ap_vid = None
        if do_eval:
            if len(dataset.image_test):
                ap_img = evaluate_detector(state, dataset.image_test).ap
            if len(dataset.video_test):
                ap_vid = evaluate_detector(state, dataset.video_test).ap
        record.epochs.append(
            EpochStats(
                epoch=epoch,
                lr=lr_at(config, epoch),
                mean_det_loss=float(np.mean(epoch_det)) if epoch_det else float("nan"),
                mean_reg_loss=float(np.mean(epoch_reg)) if epoch_reg else 0.0,
                mean_combined_loss=float(np.mean(epoch_comb)) if epoch_comb else float("nan"),
                ap_image_test=ap_img,
                ap_video_test=ap_vid,
                seconds=time.monotonic() - epoch_t0,
            )
        )
        state.epoch = epoch + 1
        if out_path is not None:
            ckpt = out_path / f"checkpoint_epoch_{epoch:03d}.npz"
            save_checkpoint(
                state,
                ckpt,
                extra_arrays=_momentum_arrays(state.model, optimizer),
                extra_meta={"training_config": config.to_dict()},
            )
            record.final_checkpoint = str(ckpt)
        epoch_det, epoch_reg, epoch_comb = [], [], []
        epoch_t0 = time.monotonic()

    stream = joint_batches(
        dataset,
        pipeline_mixup,
        config.batch_size,
        triple_batch,
        config.flip_probability,
        config.seed,
        epochs=config.epochs,
        start_epoch=start_epoch,
    )
    for batch in stream:
        if batch.epoch != current_epoch:
            finish_epoch(current_epoch)
            current_epoch = batch.epoch
            _set_lr(optimizer, lr_at(config, current_epoch))
        images = _samples_to_tensor(batch.mixup_samples, state.dtype)
        l_det = detection_loss_batch(
            state, images, [s.boxes for s in batch.mixup_samples]
        )
        if batch.triples:
            frames = _triples_to_tensor(batch.triples, state.dtype)
            b_t = frames.shape[0]
            feats = state.model.encoder(frames.reshape(-1, *frames.shape[2:]))
            feats = feats.reshape(b_t, 3, *feats.shape[1:])
            f_hat = estimate_midframe(feats[:, 0], feats[:, 2])
            l_reg = tcr_loss(feats[:, 1], f_hat)
        else:
            l_reg = torch.zeros((), dtype=state.dtype)
        loss = combined_loss(l_det, l_reg, gamma)
        if not torch.isfinite(loss):
            record.wall_clock = time.monotonic() - t_start
            if out_path is not None:
                record.save_json(out_path / "diverged_run.json")
            raise TrainingDiverged(
                f"non-finite loss at step {batch.step} "
                f"(det={float(l_det.detach())}, reg={float(l_reg.detach())})",
                record,
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        state.step = batch.step + 1
        record.step_det_losses.append(float(l_det.detach()))
        record.step_reg_losses.append(float(l_reg.detach()))
        record.step_combined_losses.append(float(loss.detach()))
        epoch_det.append(float(l_det.detach()))
        epoch_reg.append(float(l_reg.detach()))
        epoch_comb.append(float(loss.detach()))
        steps_done += 1
        if max_steps is not None and steps_done >= max_steps:
            break
    finish_epoch(current_epoch)
    record.wall_clock = time.monotonic() - t_start
    if out_path is not None:
        record.save_json(out_path / "run_record.json")
    record._state = state  # trained detector, for in-process callers
    return record


def run_experiment_matrix(
    corpus,
    seeds: Sequence[int],
    arms: Sequence[Arm] = (Arm.BASE, Arm.MIXUP, Arm.TCR, Arm.MIXUP_TCR),
    base_config: Optional[TrainingConfig] = None,
    out_dir=None,
    alpha_sweep: Sequence[float] = (),
    eval_every: int = 0,
) -> dict:
    """Train every arm for every seed and tabulate test APs.

    Returns {"rows": [...]} where each row carries the arm (or sweep
    entry) with per-seed and mean/std AP on both test splits.  With
    alpha_sweep set, additional MIXUP rows with Beta(alpha, alpha + 1)
    lambda are appended.
    """
    if not seeds:
        raise ValueError("at least one seed required")
    if not arms and not alpha_sweep:
        raise ValueError("no arms requested")
    base_config = base_config or TrainingConfig()
    dataset = corpus if isinstance(corpus, CorpusDataset) else load_manifest(corpus)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    jobs: List[Tuple[str, TrainingConfig]] = []
    for arm in arms:
        jobs.append((arm.value, replace(base_config, arm=arm)))
    for alpha in alpha_sweep:
        cfg = replace(base_config, arm=Arm.MIXUP, mixup=MixupConfig.beta(alpha))
        jobs.append((f"mixup_beta_alpha_{alpha}", cfg))

    rows = []
    for label, cfg in jobs:
        ap_img, ap_vid = [], []
        for seed in seeds:
            run_out = out_path / f"{label}_seed{seed}" if out_path is not None else None
            rec = train(
                replace(cfg, seed=seed), dataset, out_dir=run_out, eval_every=eval_every
            )
            ap_img.append(rec.final_ap_image_test)
            ap_vid.append(rec.final_ap_video_test)
        rows.append(
            {
                "label": label,
                "seeds": list(seeds),
                "ap_image_test": ap_img,
                "ap_video_test": ap_vid,
                "mean_ap_image_test": _mean(ap_img),
                "std_ap_image_test": _std(ap_img),
                "mean_ap_video_test": _mean(ap_vid),
                "std_ap_video_test": _std(ap_vid),
            }
        )
    result = {"rows": rows}
    if out_path is not None:
        with open(out_path / "matrix.json", "w") as fh:
            json.dump(result, fh, indent=1)
        with open(out_path / "matrix.csv", "w") as fh:
            fh.write("arm,mean_ap_image_test,std_ap_image_test,mean_ap_video_test,std_ap_video_test\n")
            for row in rows:
                fh.write(
                    f"{row['label']},{row['mean_ap_image_test']:.4f},{row['std_ap_image_test']:.4f},"
                    f"{row['mean_ap_video_test']:.4f},{row['std_ap_video_test']:.4f}\n"
                )
    return result


def _mean(values) -> float:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else float("nan")


def _std(values) -> float:
    values = [v for v in values if v is not None]
    return float(np.std(values)) if values else float("nan")
