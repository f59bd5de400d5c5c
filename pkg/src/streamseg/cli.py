"""Command-line entry points: synth, prepare, pretrain, finetune, infer,
evaluate. All commands exit 0 on success and nonzero with a one-line
diagnostic on error."""

from __future__ import annotations

import argparse
import os
import sys

from .model import Checkpoint
from .pipeline import (
    PipelineConfig,
    cmd_evaluate,
    cmd_finetune,
    cmd_infer,
    cmd_prepare,
    cmd_pretrain,
    export_by_class,
)
from .synthetic import default_corpus_specs, generate
from .tck import load_labeled_tractogram, save_labeled_tractogram


def _load_config(args) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config)
    if getattr(args, "representation", None):
        config = PipelineConfig(**{
            **config.__dict__, "representation": args.representation,
            "patch_size": None,
        })
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "out", None):
        config.out_dir = args.out
    return config


def _cmd_synth(args):
    os.makedirs(args.out, exist_ok=True)
    specs = default_corpus_specs(n_streamlines=args.streamlines)
    for subject in range(args.subjects):
        t = generate(specs, seed=args.seed + subject)
        base = os.path.join(args.out, f"subject_{subject:02d}")
        save_labeled_tractogram(t, base + ".tck", base + ".labels")
        print(f"wrote {base}.tck ({len(t)} streamlines, "
              f"{len(t.class_names)} classes)")


def _cmd_prepare(args):
    config = _load_config(args)
    stores = cmd_prepare(config)
    for split, store in stores.items():
        print(f"{split}: {len(store)} samples, {len(store.class_names)} classes")


def _cmd_pretrain(args):
    config = _load_config(args)
    resume = Checkpoint.load(args.resume) if args.resume else None
    ckpt = cmd_pretrain(config, resume=resume)
    print(f"pretrained {ckpt.epoch} epochs -> {config.out_dir}/pretrain")


def _cmd_finetune(args):
    config = _load_config(args)
    pretrained = Checkpoint.load(args.pretrained) if args.pretrained else None
    ckpt = cmd_finetune(config, pretrained=pretrained)
    print(f"finetuned {ckpt.epoch} epochs -> {config.out_dir}/finetune")


def _cmd_infer(args):
    config = _load_config(args)
    ckpt = Checkpoint.load(args.checkpoint)
    t = load_labeled_tractogram(args.tractogram, args.labels) if args.labels \
        else None
    if t is None:
        from .tck import read_tck
        with open(args.tractogram, "rb") as f:
            t = read_tck(f.read())
    labeled = cmd_infer(config, ckpt, t)
    out = args.out or os.path.join(config.out_dir, "inference")
    os.makedirs(out, exist_ok=True)
    save_labeled_tractogram(labeled, os.path.join(out, "predicted.tck"),
                            os.path.join(out, "predicted.labels"))
    export_by_class(labeled, os.path.join(out, "by_class"))
    print(f"labeled {len(labeled)} streamlines -> {out}")


def _cmd_evaluate(args):
    pred = load_labeled_tractogram(args.pred, args.pred_labels)
    ref = load_labeled_tractogram(args.ref, args.ref_labels)
    print(cmd_evaluate(pred, ref, voxel_size_mm=args.voxel_size), end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamseg",
        description="Registration-free streamline segmentation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=4)
    p.add_argument("--streamlines", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_synth)

    for name, fn, help_text in (
        ("prepare", _cmd_prepare, "build balanced sample stores"),
        ("pretrain", _cmd_pretrain, "autoregressive pretraining"),
        ("finetune", _cmd_finetune, "classification fine-tuning"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--representation", choices=("streamline", "cluster", "fusion"))
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if name == "pretrain":
            p.add_argument("--resume")
        if name == "finetune":
            p.add_argument("--pretrained")
        p.set_defaults(fn=fn)

    p = sub.add_parser("infer", help="classify every streamline of a tractogram")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tractogram", required=True)
    p.add_argument("--labels")
    p.add_argument("--representation", choices=("streamline", "cluster", "fusion"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("evaluate", help="voxel DICE/Overlap/Overreach report")
    p.add_argument("--pred", required=True)
    p.add_argument("--pred-labels", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--ref-labels", required=True)
    p.add_argument("--voxel-size", type=float, default=1.0)
    p.set_defaults(fn=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except Exception as e:  # one-line diagnostic, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
