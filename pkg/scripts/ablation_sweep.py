"""Ablation sweep: full model vs each variant over a seed list.

Trains every (variant, seed) pair, evaluates the final greedy policy on every
split, measures the uniform-random baseline on the same tasks, and writes
per-run results plus a mean/std summary.

Run from repo root:
    python scripts/ablation_sweep.py --seeds 0 1 2 3 4 --total-steps 200000
    python scripts/ablation_sweep.py --variants full no-cd n-prototypes=2 --out runs/sweep
"""

import argparse
import json
import os
import sys
from copy import deepcopy

import numpy as np
import pandas as pd

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SRC = os.path.join(ROOT, "src")
if SRC not in sys.path:
    sys.path.insert(0, SRC)

from config import SPLIT_NAMES, RunConfig, apply_variant, setup_logging
from env import PredatorPrey
from trainer import Trainer, evaluate, evaluate_random

DEFAULT_VARIANTS = ["full", "no-sparse", "no-cd", "no-cmi"]


def parse_args() -> argparse.Namespace:
    p = argparse.ArgumentParser(description="Ablation sweep over variants and seeds")
    p.add_argument("--config", type=str, default=None, help="Base YAML config")
    p.add_argument("--variants", nargs="+", default=DEFAULT_VARIANTS)
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2, 3, 4])
    p.add_argument("--total-steps", type=int, default=None)
    p.add_argument("--eval-episodes", type=int, default=64)
    p.add_argument("--out", type=str, default=os.path.join(ROOT, "runs", "ablation"))
    return p.parse_args()


def run_sweep(base: RunConfig, variants, seeds, eval_episodes: int, out_dir: str) -> pd.DataFrame:
    rows = []
    for variant in variants:
        for seed in seeds:
            cfg = deepcopy(base)
            cfg.train.seed = seed
            if variant != "full":
                apply_variant(cfg, variant)
            run_dir = os.path.join(out_dir, variant.replace("=", "_"), f"seed{seed}")
            print(f"\nTraining {variant} seed={seed} -> {run_dir}\n")
            trainer = Trainer(cfg, run_dir)
            trainer.run()

            for split in SPLIT_NAMES:
                rng = np.random.default_rng([seed, 5, SPLIT_NAMES.index(split)])
                res = evaluate(trainer.learner.agent, trainer.env, cfg.env, split,
                               eval_episodes, rng, dtype=trainer.learner.dtype)
                rows.append({"variant": variant, "seed": seed, "split": split, **res})

    for seed in seeds:
        env = PredatorPrey.from_config(base.env)
        for split in SPLIT_NAMES:
            rng = np.random.default_rng([seed, 5, SPLIT_NAMES.index(split)])
            res = evaluate_random(env, base.env, split, eval_episodes, rng)
            rows.append({"variant": "random", "seed": seed, "split": split, **res})
    return pd.DataFrame(rows)


def summarise(results: pd.DataFrame) -> pd.DataFrame:
    return (results.groupby(["variant", "split"])["win_rate"]
            .agg(["mean", "std", "count"]).reset_index())


def main():
    args = parse_args()
    setup_logging(level="INFO")
    base = RunConfig.from_yaml(args.config) if args.config else RunConfig()
    base = RunConfig.from_env(base=base)
    if args.total_steps is not None:
        base.train.total_steps = args.total_steps

    results = run_sweep(base, args.variants, args.seeds, args.eval_episodes, args.out)
    summary = summarise(results)

    os.makedirs(args.out, exist_ok=True)
    results.to_csv(os.path.join(args.out, "results.csv"), index=False)
    summary.to_csv(os.path.join(args.out, "summary.csv"), index=False)
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary.to_dict(orient="records"), fh, indent=2, default=str)

    print("\nAblation summary saved to:", args.out)
    print(summary.to_string(index=False))


if __name__ == "__main__":
    main()
