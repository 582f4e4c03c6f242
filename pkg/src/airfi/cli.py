"""``airfi`` command line: generate, train, fewshot, evaluate, export-features."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import load_config
from .csi_core import DatasetError, SplitPlan, load_dataset, save_dataset, split_leave_one_env
from .evaluation import evaluate, export_features, write_table
from .synth import GenConfig, generate_dataset
from .training import fewshot_adapt, select_fewshot_samples, train, write_loss_csv


def _generate(args) -> int:
    cfg = GenConfig(num_envs=args.envs, num_classes=args.classes, samples_per_class_per_env=args.per_class,
                    seed=args.seed)
    path = save_dataset(generate_dataset(cfg), args.out)
    print(f"wrote {cfg.num_envs * cfg.num_classes * cfg.samples_per_class_per_env} samples to {path}")
    return 0


def _train(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_flat(**{"train.seed": args.seed})
    if args.steps is not None:
        config = config.with_flat(**{"train.steps": args.steps})
    data = load_dataset(args.data)
    plan = SplitPlan.leave_one_out(sorted(data.env_ids), args.holdout_env)
    sources, _ = split_leave_one_env(data, plan)
    del data
    model = train(sources, config)
    save_checkpoint(model, args.out)
    loss_path = args.loss_csv or Path(str(args.out) + ".losses.csv")
    write_loss_csv(model.history, loss_path)
    print(f"{plan.name}: trained {config.train.steps} steps, checkpoint {args.out}, losses {loss_path}")
    return 0


def _fewshot(args) -> int:
    model = load_checkpoint(args.ckpt)
    target = load_dataset(args.target_samples)
    k = args.k if args.k is not None else model.config.fewshot.k_target_samples
    if len(target) > k:
        target, _ = select_fewshot_samples(target, k, seed=args.seed)
    adapted = fewshot_adapt(model, target, seed=args.seed)
    save_checkpoint(adapted, args.out)
    print(f"adapted on {len(target)} target samples, checkpoint {args.out}")
    return 0


def _evaluate(args) -> int:
    model = load_checkpoint(args.ckpt)
    data = load_dataset(args.data)
    if args.env is not None:
        data = data.filter_envs([args.env])
    table = evaluate(model, data)
    if args.out:
        write_table(table, args.out)
    print(f"{table.env_index_label}: overall {100 * table.overall:.2f}%")
    return 0


def _export(args) -> int:
    model = load_checkpoint(args.ckpt)
    rows = export_features(model, load_dataset(args.data), args.out)
    print(f"wrote {rows} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="airfi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic multi-environment dataset")
    p.add_argument("--envs", type=int, default=4)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_generate)

    p = sub.add_parser("train", help="train on every environment except the held-out one")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--holdout-env", required=True, type=int)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--loss-csv", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=_train)

    p = sub.add_parser("fewshot", help="adapt a checkpoint with a few labeled target samples")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--target-samples", required=True, type=Path)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_fewshot)

    p = sub.add_parser("evaluate", help="accuracy table for one environment")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--env", type=int)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_evaluate)

    p = sub.add_parser("export-features", help="dump encoded codes as CSV")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, json.JSONDecodeError, DatasetError, CheckpointError) as exc:
        print(f"airfi {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
