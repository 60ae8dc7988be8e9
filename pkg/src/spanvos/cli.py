"""Command-line entry point: gen, train, infer, eval, stats, ablate.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure during training or inference.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import (
    read_dataset,
    read_predictions,
    write_dataset,
    write_predictions,
)
from .errors import ConfigError, InvalidSpanError, IoError, NonFiniteError, SchemaError, VocabError
from .infer import evaluate_records, run_inference
from .metrics import dataset_stats
from .synth import GenConfig, generate_sample, make_ti_suite
from .train import Trainer, load_model

CONFIG_ERRORS = (ConfigError, InvalidSpanError)
DATA_ERRORS = (IoError, SchemaError, VocabError, KeyError, FileNotFoundError)


def _parse_float_list(text):
    return [float(v) for v in text.split(",") if v.strip() != ""]


def _parse_int_list(text):
    return [int(v) for v in text.split(",") if v.strip() != ""]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spanvos",
        description="Referring video segmentation with span prediction: "
                    "synthetic benchmark, training, and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--count", type=int, default=16)
    gen.add_argument("--frames", type=int, default=48)
    gen.add_argument("--size", type=int, default=64, help="frame height and width")
    gen.add_argument("--distractors", type=int, default=2)
    gen.add_argument("--segments", type=int, default=1)
    gen.add_argument("--scene-cuts", type=int, default=2)
    gen.add_argument("--ti-suite", default="",
                     help="comma-separated TI rates; overrides --count")
    gen.add_argument("--min-ti", type=float, default=None,
                     help="resample each video until its TI rate is >= this")
    gen.add_argument("--frames-format", choices=("bin", "png"), default="bin")

    train = sub.add_parser("train", help="train a model on a dataset")
    train.add_argument("--dataset", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--config", default=None, help="RunConfig JSON to start from")
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--steps", type=int, default=None)
    train.add_argument("--t-train", type=int, default=None)
    train.add_argument("--lr", type=float, default=None)
    train.add_argument("--precision", choices=("f32", "f64"), default=None)
    train.add_argument("--no-span", action="store_true")
    train.add_argument("--no-rel", action="store_true")
    train.add_argument("--coupled-srd", action="store_true")

    infer = sub.add_parser("infer", help="run a checkpoint over a dataset")
    infer.add_argument("--checkpoint", required=True)
    infer.add_argument("--dataset", required=True)
    infer.add_argument("--out", required=True, help="predictions JSON path")
    infer.add_argument("--no-span", action="store_true",
                       help="predict over all frames regardless of the span head")

    ev = sub.add_parser("eval", help="score serialized predictions")
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--out", default=None, help="write the JSON report here")

    stats = sub.add_parser("stats", help="dataset statistics")
    stats.add_argument("--dataset", required=True)
    stats.add_argument("--out", default=None)

    ablate = sub.add_parser("ablate", help="train/eval pairs over one toggle")
    ablate.add_argument("--dataset", required=True)
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--axis", choices=("span", "rel", "srd", "t-train"),
                        required=True)
    ablate.add_argument("--seeds", default="0", help="comma-separated seeds")
    ablate.add_argument("--steps", type=int, default=600)
    ablate.add_argument("--t-train", type=int, default=24)
    ablate.add_argument("--t-train-values", default="12,24")
    ablate.add_argument("--config", default=None)
    return parser


def _load_run_config(args):
    run = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        run.seed = args.seed
    if args.steps is not None:
        run.steps = args.steps
    if getattr(args, "t_train", None) is not None:
        run.t_train = args.t_train
    if getattr(args, "lr", None) is not None:
        run.learning_rate = args.lr
    if getattr(args, "precision", None):
        run.precision = args.precision
    if getattr(args, "no_span", False):
        run.span_enabled = False
    if getattr(args, "no_rel", False):
        run.rel_enabled = False
    if getattr(args, "coupled_srd", False):
        run.model.coupled_srd = True
    return run.validate()


def cmd_gen(args):
    cfg = GenConfig(num_frames=args.frames, height=args.size, width=args.size,
                    num_distractors=args.distractors, num_segments=args.segments,
                    scene_cuts=args.scene_cuts).validate()
    if args.ti_suite:
        targets = _parse_float_list(args.ti_suite)
        seeds = [args.seed + i for i in range(len(targets))]
        samples = make_ti_suite(seeds, targets, cfg)
    else:
        samples = []
        seed = args.seed
        for _ in range(args.count):
            sample = generate_sample(seed, cfg)
            seed += 1
            if args.min_ti is not None:
                while sample.ti < args.min_ti:
                    sample = generate_sample(seed, cfg)
                    seed += 1
            samples.append(sample)
    write_dataset(samples, args.out, frames_format=args.frames_format)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args):
    run = _load_run_config(args)
    run.dataset = args.dataset
    run.out_dir = args.out
    samples, manifest = read_dataset(args.dataset)
    run.model.vocab_size = len(manifest.vocabulary)
    trainer = Trainer(run, samples)
    result = trainer.train(out_dir=args.out)
    print(f"trained {result.steps_run} steps: loss {result.initial_loss:.4f} "
          f"-> {result.final_loss:.4f}; checkpoint {result.checkpoint}")
    return 0


def cmd_infer(args):
    model, run_cfg = load_model(args.checkpoint)
    samples, _ = read_dataset(args.dataset)
    force_full = args.no_span or not run_cfg.span_enabled
    records = run_inference(model, samples, force_full_span=force_full)
    write_predictions(args.out, records, checkpoint=args.checkpoint)
    print(f"wrote {len(records)} predictions to {args.out}")
    return 0


def cmd_eval(args):
    records, _ = read_predictions(args.predictions)
    samples, _ = read_dataset(args.dataset)
    report = evaluate_records(records, samples)
    print(report.to_text())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=1))
    return 0


def cmd_stats(args):
    samples, manifest = read_dataset(args.dataset)
    stats = dataset_stats(samples, fps=manifest.fps)
    print(stats.to_text())
    if args.out:
        Path(args.out).write_text(json.dumps(stats.to_dict(), indent=1))
    return 0


def _ablate_variants(args, base):
    if args.axis == "span":
        return [("span_on", base), ("span_off", {**base, "span_enabled": False})]
    if args.axis == "rel":
        return [("rel_on", base), ("rel_off", {**base, "rel_enabled": False})]
    if args.axis == "srd":
        coupled = dict(base)
        coupled["model"] = {**base.get("model", {}), "coupled_srd": True}
        return [("decoupled", base), ("coupled", coupled)]
    values = _parse_int_list(args.t_train_values)
    return [(f"t_train_{v}", {**base, "t_train": v}) for v in values]


def cmd_ablate(args):
    seeds = _parse_int_list(args.seeds)
    base_run = RunConfig.load(args.config) if args.config else RunConfig()
    base_run.steps = args.steps
    base_run.t_train = args.t_train
    base = base_run.to_dict()
    samples, _ = read_dataset(args.dataset)
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, cfg_dict in _ablate_variants(args, base):
        jf_scores, tiou_scores = [], []
        for seed in seeds:
            run = RunConfig.from_dict({**cfg_dict, "seed": seed})
            trainer = Trainer(run, samples)
            trainer.train(out_dir=out_root / name / f"seed{seed}", log=None)
            records = run_inference(trainer.model, samples,
                                    force_full_span=not run.span_enabled)
            report = evaluate_records(records, samples)
            jf_scores.append(report.overall["jf"])
            tiou_scores.append(report.overall["tiou"])
        rows.append({"variant": name, "seeds": seeds,
                     "jf": float(np.mean(jf_scores)),
                     "tiou": float(np.mean(tiou_scores)),
                     "jf_per_seed": jf_scores, "tiou_per_seed": tiou_scores})
        print(f"{name:12s}  J&F {rows[-1]['jf']:.4f}  tIoU {rows[-1]['tiou']:.4f}")
    (out_root / "ablation.json").write_text(json.dumps(
        {"axis": args.axis, "steps": args.steps, "rows": rows}, indent=1))
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "infer": cmd_infer,
            "eval": cmd_eval, "stats": cmd_stats, "ablate": cmd_ablate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CONFIG_ERRORS as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DATA_ERRORS as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NonFiniteError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
