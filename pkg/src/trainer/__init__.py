"""Episode collection, replay, optimisation and evaluation."""

from .episode import Episode, EpisodeBatch, ReplayBuffer
from .learner import LossBreakdown, OPTLearner
from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .collectors import CollectorJob, CollectorPool
from .runner import (
    Trainer, area_under_curve, collect_episode, evaluate, evaluate_random, replay_q_values,
)

__all__ = [
    "Episode", "EpisodeBatch", "ReplayBuffer", "LossBreakdown", "OPTLearner",
    "CheckpointError", "load_checkpoint", "read_checkpoint", "save_checkpoint",
    "CollectorJob", "CollectorPool", "Trainer", "area_under_curve", "collect_episode",
    "evaluate", "evaluate_random", "replay_q_values",
]
