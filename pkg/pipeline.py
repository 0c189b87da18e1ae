#!/usr/bin/env python3
"""
Collective KD - command-line pipeline.

Usage:
    python pipeline.py gen-synthetic --out data
    python pipeline.py --config data/config.toml pretrain
    python pipeline.py --config data/config.toml index
    python pipeline.py --config data/config.toml annotate
    python pipeline.py --config data/config.toml distill
    python pipeline.py --config data/config.toml index --checkpoint data/out/student.crwt
    python pipeline.py --config data/config.toml rank
    python pipeline.py --config data/config.toml eval --mrt
    python pipeline.py --config data/config.toml --set prf.beta=0.5 sweep

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from collective_kd import __version__
from collective_kd.config import load_config
from collective_kd.constants import ExitCode
from collective_kd.errors import ValidationError
from stage_handler import StageHandler

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"

# dedicated flags and the config keys they override
FLAG_OVERRIDES = {
    "seed": "run.seed",
    "threads": "run.threads",
    "depth": "retrieval.depth",
    "beta": "prf.beta",
    "epochs": "train.epochs",
    "lr": "train.learning_rate",
}


def _id_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integer ids, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pipeline.py", description="Collective-teacher distillation pipeline")
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--depth", type=int)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)

    commands = parser.add_subparsers(dest="command", required=True)
    index = commands.add_parser("index", help="encode the corpus into an index directory")
    index.add_argument("--checkpoint", help="projection checkpoint (default: theta if present)")
    rank = commands.add_parser("rank", help="rank queries and write a TREC run")
    rank.add_argument("--queries", dest="query_ids", type=_id_list, help="only these query ids")
    commands.add_parser("annotate", help="label training queries with the collective teacher")
    commands.add_parser("pretrain", help="train theta with the hard loss")
    commands.add_parser("distill", help="train the student from theta on the labels")
    evaluate = commands.add_parser("eval", help="score a run against the evaluation qrels")
    evaluate.add_argument("--run", help="run file (default: the configured run)")
    evaluate.add_argument("--mrt", action="store_true", help="also measure mean retrieval time")
    commands.add_parser("sweep", help="one-at-a-time sweep of the teacher settings")
    commands.add_parser("pr", help="precision/recall curves of teacher and model")
    compare = commands.add_parser("compare", help="compare training strategies across seeds")
    compare.add_argument("--seeds", type=_id_list, help="comma-separated seeds")
    synthetic = commands.add_parser("gen-synthetic", help="write the synthetic dataset and config")
    synthetic.add_argument("--out", default="synthetic", help="output directory")
    return parser


def _options(args: argparse.Namespace) -> dict:
    if args.command == "index":
        return {"checkpoint": str(Path(args.checkpoint).resolve()) if args.checkpoint else None}
    if args.command == "rank":
        return {"query_ids": args.query_ids}
    if args.command == "eval":
        return {"run": str(Path(args.run).resolve()) if args.run else None, "mrt": args.mrt}
    if args.command == "compare":
        return {"seeds": args.seeds}
    if args.command == "gen-synthetic":
        return {"out": args.out, "seed": args.seed if args.seed is not None else 0}
    return {}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT, stream=sys.stderr)
    logger = logging.getLogger("collective_kd.pipeline")
    logger.info(f"Collective KD {__version__} · {args.command}")

    config = None
    if args.command != "gen-synthetic":
        overrides = list(args.overrides)
        for flag, key in FLAG_OVERRIDES.items():
            value = getattr(args, flag)
            if value is not None:
                overrides.append(f"{key}={value}")
        try:
            config = load_config(args.config, overrides).validate()
        except ValidationError as exc:
            logger.error(f"{type(exc).__name__}: {exc}")
            return ExitCode.VALIDATION

    return StageHandler(config).handle(args.command, _options(args))


if __name__ == "__main__":
    sys.exit(main())
