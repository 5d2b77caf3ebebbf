"""Task parameters and split sampling for the Predator-Prey scenario family."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np

from config import SPLIT_NAMES, ConfigError, EnvConfig, SplitRanges

logger = logging.getLogger(__name__)

N_FEATURES = 8        # d_e of every observation / state row
N_ACTIONS = 6
_MAX_DRAWS = 10_000


@dataclass(frozen=True)
class TaskSpec:
    """One concrete Predator-Prey task."""
    grid_w: int
    grid_h: int
    n_agents: int
    n_prey: int
    n_obstacles: int
    attack_caps: Tuple[int, ...]
    defense_caps: Tuple[int, ...]
    sight_range: int
    horizon: int

    def __post_init__(self):
        if self.n_agents < 1 or self.n_prey < 1 or self.n_obstacles < 0:
            raise ConfigError(
                f"need n_agents >= 1, n_prey >= 1, n_obstacles >= 0 "
                f"(got {self.n_agents}, {self.n_prey}, {self.n_obstacles})"
            )
        if len(self.attack_caps) != self.n_agents or len(self.defense_caps) != self.n_prey:
            raise ConfigError("one capability per agent and per prey is required")
        if min(self.attack_caps) < 1 or min(self.defense_caps) < 1:
            raise ConfigError("capabilities must be >= 1")
        if self.horizon < 1 or self.sight_range < 0:
            raise ConfigError("horizon must be >= 1 and sight_range >= 0")

    @property
    def n_entities(self) -> int:
        return self.n_agents + self.n_prey + self.n_obstacles

    @property
    def feasible(self) -> bool:
        """Every prey can be captured by the whole team acting together."""
        return sum(self.attack_caps) >= max(self.defense_caps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attack_caps"] = list(self.attack_caps)
        d["defense_caps"] = list(self.defense_caps)
        return d


@dataclass(frozen=True)
class ScenarioFamily:
    """Padding bounds shared by every task of a family.

    Entity slots are laid out as agents, then prey, then obstacles, each block
    padded to its maximum, so M and d_e are fixed across tasks.
    """
    max_agents: int
    max_prey: int
    max_obstacles: int
    max_capability: int
    grid_w: int
    grid_h: int

    @classmethod
    def from_config(cls, env: EnvConfig) -> "ScenarioFamily":
        max_cap = max(max(s.attack_caps[1], s.defense_caps[1]) for s in env.splits.values())
        return cls(max_agents=env.max_agents, max_prey=env.max_prey,
                   max_obstacles=env.max_obstacles, max_capability=max_cap,
                   grid_w=env.grid_w, grid_h=env.grid_h)

    @property
    def n_entities(self) -> int:
        return self.max_agents + self.max_prey + self.max_obstacles

    @property
    def prey_offset(self) -> int:
        return self.max_agents

    @property
    def obstacle_offset(self) -> int:
        return self.max_agents + self.max_prey

    def fits(self, task: TaskSpec) -> bool:
        return (task.n_agents <= self.max_agents and task.n_prey <= self.max_prey
                and task.n_obstacles <= self.max_obstacles)


# ─────────────────────────────────────────────────────────────────────────────
# Split sampling
# ─────────────────────────────────────────────────────────────────────────────

def _draw(rng: np.random.Generator, bounds, size=None):
    lo, hi = int(bounds[0]), int(bounds[1])
    if lo > hi:
        raise ConfigError(f"empty range [{lo}, {hi}]")
    return rng.integers(lo, hi + 1, size=size)


def _inside(value: int, bounds) -> bool:
    return bounds[0] <= value <= bounds[1]


def outside_training(task: TaskSpec, train: SplitRanges) -> bool:
    """True when at least one task parameter lies outside the training ranges."""
    return (
        not _inside(task.n_agents, train.n_agents)
        or not _inside(task.n_prey, train.n_prey)
        or not _inside(task.n_obstacles, train.n_obstacles)
        or any(not _inside(c, train.attack_caps) for c in task.attack_caps)
        or any(not _inside(c, train.defense_caps) for c in task.defense_caps)
    )


def sample_task(split: str, env: EnvConfig, rng: np.random.Generator) -> TaskSpec:
    """Draw a task uniformly from ``split``'s ranges.

    Non-training splits are rejection-sampled until some parameter falls
    outside the training ranges; with ``env.require_feasible`` tasks whose
    strongest prey exceeds the team's total attack are redrawn too.
    """
    if split not in SPLIT_NAMES or split not in env.splits:
        raise ConfigError(f"unknown split '{split}' (expected one of {list(SPLIT_NAMES)})")
    ranges = env.splits[split]
    train = env.splits["train"]

    for _ in range(_MAX_DRAWS):
        n_agents = int(_draw(rng, ranges.n_agents))
        n_prey = int(_draw(rng, ranges.n_prey))
        n_obstacles = int(_draw(rng, ranges.n_obstacles))
        attack = tuple(int(c) for c in _draw(rng, ranges.attack_caps, size=n_agents))
        defense = tuple(int(c) for c in _draw(rng, ranges.defense_caps, size=n_prey))
        task = TaskSpec(grid_w=env.grid_w, grid_h=env.grid_h, n_agents=n_agents,
                        n_prey=n_prey, n_obstacles=n_obstacles, attack_caps=attack,
                        defense_caps=defense, sight_range=env.sight_range, horizon=env.horizon)
        if split != "train" and not outside_training(task, train):
            continue
        if env.require_feasible and not task.feasible:
            continue
        logger.debug(f"Sampled {split} task: {task}")
        return task

    raise ConfigError(f"could not sample a valid '{split}' task in {_MAX_DRAWS} draws; check its ranges")
