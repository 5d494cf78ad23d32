"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import CASES, ExperimentConfig

STAGES = {
    "gen-data": pipeline.run_gen_data,
    "train": pipeline.run_train,
    "invert": pipeline.run_invert,
    "metrics": pipeline.run_metrics,
    "spectrum": pipeline.run_spectrum,
    "emit-plots": pipeline.run_emit_plots,
    "run": pipeline.run_pipeline,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="olgan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config (defaults per --case otherwise)")
        p.add_argument("--case", choices=CASES, default=None)
        p.add_argument("--seed", type=int, default=None, help="master seed (u64)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--epochs", type=int, default=None, help="override the training epoch budget")
        p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("default-config").add_argument("--case", choices=CASES, default="case1")
    return parser


def resolve_config(args):
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        if args.case and args.case != cfg.case:
            raise ValueError(f"--case {args.case} conflicts with config case {cfg.case}")
    else:
        cfg = ExperimentConfig.defaults(args.case or "case1")
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    return cfg


def _summary(command, result, cfg):
    out = {"status": "ok", "command": command, "out": str(cfg.out), "seed": cfg.seed}
    if command == "invert":
        out["posterior"] = result["posterior"]["summary"]
        out["acceptance_rate"] = result["posterior"]["acceptance_rate"]
    elif command in ("metrics", "run"):
        out["metrics"] = {k: v for k, v in result.items() if k not in ("config",)}
    elif command == "emit-plots":
        out["files"] = result
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "default-config":
        print(ExperimentConfig.defaults(args.case).dumps())
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        cfg.save(Path(cfg.out) / "config.json")
        result = STAGES[args.command](cfg)
    except Exception as exc:
        err = {
            "status": "error",
            "command": args.command,
            "stage": getattr(exc, "stage", args.command),
            "type": type(exc.__cause__ or exc).__name__,
            "message": str(exc),
        }
        print(json.dumps(err), file=sys.stdout)
        return 2 if isinstance(exc, (ValueError, FileNotFoundError)) else 1
    print(json.dumps(_summary(args.command, result, cfg), default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
