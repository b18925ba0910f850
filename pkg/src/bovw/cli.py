"""Command-line entry point: ``bovw {generate,fit,encode,train-eval,run,selftest}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import ExperimentConfig
from .errors import BovwError
from .selftest import format_results, run_selftest

STAGES = {
    "generate": pipeline.cmd_generate,
    "fit": pipeline.cmd_fit,
    "encode": pipeline.cmd_encode,
    "train-eval": pipeline.cmd_train_eval,
    "run": pipeline.run_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bovw", description="Bag-of-visual-words encoding experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "run" else "run every stage in order")
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--jobs", type=int, help="worker processes for encoding")
        p.add_argument("--output", help="override the output directory")
    p = sub.add_parser("selftest", help="run built-in invariant checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", action="append", default=[], help="also try to load this model file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        results = run_selftest(args.model, seed=args.seed)
        print(format_results(results))
        return 0 if all(r.ok for r in results) else 1
    try:
        cfg = ExperimentConfig.load(args.config).override(seed=args.seed, jobs=args.jobs, output=args.output)
        result = STAGES[args.command](cfg)
    except (BovwError, ValueError, OSError) as exc:
        print(f"bovw {args.command}: error: {exc}", file=sys.stderr)
        return 2
    if isinstance(result, dict):
        print(json.dumps({k: v["accuracy"] for k, v in result["experiments"].items()}, indent=2))
    else:
        print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
