"""Command-line entry point.

Usage (from src/):
    python -m cli train --config ../config.example.yaml --seed 0 --out ../runs/seed0
    python -m cli eval --checkpoint ../runs/seed0/checkpoints/final.pt --split unseen_both --episodes 64
    python -m cli ablate --variant no-cd --seed 0 --out ../runs/no-cd
    python -m cli check --suite sparsemax
    python -m cli dump-prototypes --checkpoint ../runs/seed0/checkpoints/final.pt --episodes 2 --out dump.json

Exit codes: 0 success, 1 usage/config error, 2 runtime failure, 3 check failure.
Config precedence: defaults -> YAML (--config) -> OPTMARL_* env vars -> flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

import numpy as np

from config import ABLATION_VARIANTS, SPLIT_NAMES, ConfigError, RunConfig, apply_variant, setup_logging
from numerics import InvalidInputError

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

# rng stream id for command-line evaluations
_CLI_EVAL = 4


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with ``EXIT_USAGE``."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ─────────────────────────────────────────────────────────────────────────────
# Arguments
# ─────────────────────────────────────────────────────────────────────────────

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="Path to YAML config file")
    p.add_argument("--seed", type=int, default=None, help="Overrides train.seed")
    p.add_argument("--out", type=str, required=True, help="Run directory")
    p.add_argument("--total-steps", type=int, default=None, help="Overrides train.total_steps")
    p.add_argument("--n-collectors", type=int, default=None, help="Overrides train.n_collectors")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    p = _Parser(
        prog="cli",
        description="Interaction-prototype value decomposition on multi-task Predator-Prey",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--log-level", type=str, default=None,
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--log-file", type=str, default=None, help="Also write logs to this file")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="Train a model")
    _add_train_flags(train)

    ablate = sub.add_parser("ablate", help="Train one ablation variant")
    ablate.add_argument("--variant", type=str, required=True,
                        help=f"One of {', '.join(ABLATION_VARIANTS)}")
    _add_train_flags(ablate)

    ev = sub.add_parser("eval", help="Greedy evaluation of a checkpoint")
    ev.add_argument("--checkpoint", type=str, required=True)
    ev.add_argument("--split", type=str, default="train", choices=list(SPLIT_NAMES))
    ev.add_argument("--episodes", type=int, default=32)
    ev.add_argument("--seed", type=int, default=None, help="Defaults to the checkpoint's train.seed")

    check = sub.add_parser("check", help="Run a numerical verification suite")
    check.add_argument("--suite", type=str, required=True,
                       choices=["sparsemax", "gradients", "cmi", "mixer", "complexity"])

    dump = sub.add_parser("dump-prototypes", help="Export prototype attention as JSON")
    dump.add_argument("--checkpoint", type=str, required=True)
    dump.add_argument("--episodes", type=int, default=1)
    dump.add_argument("--out", type=str, required=True)
    dump.add_argument("--split", type=str, default="train", choices=list(SPLIT_NAMES))
    dump.add_argument("--seed", type=int, default=None)
    return p.parse_args(argv)


def build_config(args: argparse.Namespace) -> RunConfig:
    """Construct RunConfig from YAML -> env -> CLI overrides."""
    cfg = RunConfig.from_yaml(args.config) if args.config else RunConfig()
    cfg = RunConfig.from_env(base=cfg)

    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    if getattr(args, "total_steps", None) is not None:
        cfg.train.total_steps = args.total_steps
    if getattr(args, "n_collectors", None) is not None:
        cfg.train.n_collectors = args.n_collectors
    if args.log_level:
        cfg.log_level = args.log_level
    if getattr(args, "variant", None):
        apply_variant(cfg, args.variant)
    cfg.validate()
    return cfg


# ─────────────────────────────────────────────────────────────────────────────
# Commands
# ─────────────────────────────────────────────────────────────────────────────

def cmd_train(args: argparse.Namespace) -> int:
    from trainer import Trainer

    cfg = build_config(args)
    setup_logging(level=cfg.log_level, log_file=args.log_file)
    Trainer(cfg, args.out).run()
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    return cmd_train(args)


def _load(path: str):
    from env import N_ACTIONS, N_FEATURES, PredatorPrey
    from trainer import load_checkpoint

    learner, cfg, _ = load_checkpoint(path, N_FEATURES, N_ACTIONS)
    return learner, cfg, PredatorPrey.from_config(cfg.env)


def cmd_eval(args: argparse.Namespace) -> int:
    from trainer import evaluate

    if args.episodes < 1:
        raise InvalidInputError("--episodes must be >= 1")
    setup_logging(level=args.log_level or "WARNING", log_file=args.log_file)
    learner, cfg, env = _load(args.checkpoint)
    seed = cfg.train.seed if args.seed is None else args.seed
    rng = np.random.default_rng([seed, _CLI_EVAL])
    result = evaluate(learner.agent, env, cfg.env, args.split, args.episodes, rng, dtype=learner.dtype)
    print(json.dumps({
        "win_rate": result["win_rate"],
        "mean_return": result["mean_return"],
        "split": args.split,
        "episodes": args.episodes,
    }))
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    from analysis import run_suite

    setup_logging(level=args.log_level or "WARNING", log_file=args.log_file)
    results = run_suite(args.suite)
    for r in results:
        print(r.line())
    n_failed = sum(not r.passed for r in results)
    print(f"{args.suite}: {len(results) - n_failed}/{len(results)} passed")
    return EXIT_OK if n_failed == 0 else EXIT_CHECK


def cmd_dump_prototypes(args: argparse.Namespace) -> int:
    from analysis import dump_prototypes, write_prototype_dump

    if args.episodes < 1:
        raise InvalidInputError("--episodes must be >= 1")
    setup_logging(level=args.log_level or "INFO", log_file=args.log_file)
    learner, cfg, env = _load(args.checkpoint)
    seed = cfg.train.seed if args.seed is None else args.seed
    rng = np.random.default_rng([seed, _CLI_EVAL])
    dump = dump_prototypes(learner, env, cfg, args.episodes, rng, split=args.split)
    write_prototype_dump(args.out, dump)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "check": cmd_check,
    "dump-prototypes": cmd_dump_prototypes,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    from trainer import CheckpointError

    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InvalidInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        logger.exception(f"{args.command} failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
