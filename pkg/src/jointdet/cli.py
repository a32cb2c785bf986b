"""Command-line interface.

Subcommands: generate (synthetic corpus), train (one arm), eval (score a
checkpoint on a test split), matrix (all arms x seeds comparison table),
preview (write blended samples with boxes drawn for visual inspection).

Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .datapipe import ManifestError, load_manifest
from .detector import load_checkpoint
from .driver import (
    Arm,
    TrainingConfig,
    TrainingDiverged,
    run_experiment_matrix,
    train,
)
from .evalkit import evaluate_detector
from .mixup import MixupConfig, make_virtual_sample
from .synthgen import CorpusConfig, gen_corpus


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jointdet",
        description="Joint image/video detector training toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="generate a synthetic corpus")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--images", type=int, default=CorpusConfig.images)
    p_gen.add_argument("--neg-videos", type=int, default=CorpusConfig.neg_videos)
    p_gen.add_argument("--pos-videos", type=int, default=CorpusConfig.pos_videos)
    p_gen.add_argument(
        "--frames", type=int, default=None, help="frames per video (both kinds)"
    )

    p_train = sub.add_parser("train", help="train one arm on a corpus")
    p_train.add_argument("--corpus", required=True)
    p_train.add_argument("--arm", choices=[a.value for a in Arm], default=None)
    p_train.add_argument("--config", default=None, help="YAML training config file")
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seed", type=int, default=None)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a test split")
    p_eval.add_argument("--corpus", required=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", choices=["image-test", "video-test"], required=True)
    p_eval.add_argument("--out", required=True)

    p_matrix = sub.add_parser("matrix", help="train all four arms over seeds")
    p_matrix.add_argument("--corpus", required=True)
    p_matrix.add_argument("--seeds", required=True, help="comma-separated seed list")
    p_matrix.add_argument("--out", required=True)
    p_matrix.add_argument("--config", default=None, help="YAML training config file")
    p_matrix.add_argument(
        "--alpha-sweep",
        default="",
        help="comma-separated Beta alphas for an extra mixup ablation",
    )

    p_prev = sub.add_parser("preview", help="write blended samples with boxes drawn")
    p_prev.add_argument("--corpus", required=True)
    p_prev.add_argument("--mixup-config", default=None, help="YAML mixup config file")
    p_prev.add_argument("--out", required=True)
    p_prev.add_argument("--count", type=int, default=16)
    p_prev.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_generate(args) -> int:
    kwargs = {
        "seed": args.seed,
        "images": args.images,
        "neg_videos": args.neg_videos,
        "pos_videos": args.pos_videos,
    }
    if args.frames is not None:
        kwargs["frames_per_neg"] = args.frames
        kwargs["frames_per_pos"] = args.frames
    config = CorpusConfig(**kwargs)
    manifest = gen_corpus(config, args.out)
    counts = {k: len(v) for k, v in manifest["items"].items()}
    print(f"corpus written to {args.out}: {counts}")
    return 0


def _load_training_config(path, arm, seed) -> TrainingConfig:
    config = TrainingConfig.load(path) if path else TrainingConfig()
    if arm is not None:
        config = dataclasses.replace(config, arm=Arm(arm))
    if seed is not None:
        config = dataclasses.replace(config, seed=seed)
    return config


def _cmd_train(args) -> int:
    config = _load_training_config(args.config, args.arm, args.seed)
    record = train(config, args.corpus, out_dir=args.out)
    print(
        f"arm={config.arm.value} seed={config.seed} "
        f"ap_image_test={record.final_ap_image_test} "
        f"ap_video_test={record.final_ap_video_test}"
    )
    print(f"run record and checkpoints written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    state, _, _ = load_checkpoint(args.checkpoint)
    dataset = load_manifest(args.corpus)
    split = dataset.image_test if args.split == "image-test" else dataset.video_test
    report = evaluate_detector(state, split)
    report.save_json(args.out)
    pr_path = Path(args.out).with_suffix(".pr.csv")
    report.save_pr_csv(pr_path)
    print(f"AP@IoU{report.iou_threshold} on {args.split}: {report.ap:.4f}")
    print(f"report: {args.out}; PR curve: {pr_path}")
    return 0


def _cmd_matrix(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    sweep = [float(a) for a in args.alpha_sweep.split(",") if a.strip()]
    config = _load_training_config(args.config, None, None)
    result = run_experiment_matrix(
        args.corpus, seeds, base_config=config, out_dir=args.out, alpha_sweep=sweep
    )
    print(f"{'arm':24s} {'AP image-test':>16s} {'AP video-test':>16s}")
    for row in result["rows"]:
        print(
            f"{row['label']:24s} "
            f"{row['mean_ap_image_test']:.3f} +- {row['std_ap_image_test']:.3f}  "
            f"{row['mean_ap_video_test']:.3f} +- {row['std_ap_video_test']:.3f}"
        )
    print(f"table written to {args.out}")
    return 0


def _draw_box(pixels: np.ndarray, box, color=(1.0, 1.0, 0.0)) -> None:
    h, w = pixels.shape[:2]
    x1 = int(np.clip(round(box.x_min), 0, w - 1))
    x2 = int(np.clip(round(box.x_max), 0, w - 1))
    y1 = int(np.clip(round(box.y_min), 0, h - 1))
    y2 = int(np.clip(round(box.y_max), 0, h - 1))
    pixels[y1, x1 : x2 + 1] = color
    pixels[y2, x1 : x2 + 1] = color
    pixels[y1 : y2 + 1, x1] = color
    pixels[y1 : y2 + 1, x2] = color


def _cmd_preview(args) -> int:
    from PIL import Image

    if args.mixup_config:
        with open(args.mixup_config) as fh:
            mixup = MixupConfig.from_dict(yaml.safe_load(fh))
    else:
        mixup = MixupConfig.discrete(c=0.5, p=1.0)  # always blend, for inspection
    dataset = load_manifest(args.corpus)
    if len(dataset.video_train) == 0:
        raise ValueError("preview needs a video-train split to blend against")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    count = min(args.count, len(dataset.image_train))
    for i in range(count):
        image = dataset.image_train.image(i)
        vi = int(rng.integers(len(dataset.video_train)))
        fi = int(rng.integers(dataset.video_train.videos[vi]["n_frames"]))
        frame = dataset.video_train.frame(vi, fi)
        sample = make_virtual_sample(image, frame, mixup, rng)
        canvas = sample.pixels.copy()
        for box in sample.boxes:
            _draw_box(canvas, box)
        arr = np.clip(np.round(canvas * 255), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(out / f"preview_{i:03d}_lambda{sample.lambda_used:.2f}.png")
    print(f"{count} preview images written to {out}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "matrix": _cmd_matrix,
    "preview": _cmd_preview,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, ManifestError, FileNotFoundError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
