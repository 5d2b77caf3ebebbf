"""Episode records, padded batches and the FIFO episode replay buffer."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional, Sequence

import numpy as np
import torch

from env import STOP, TaskSpec, WorldState

logger = logging.getLogger(__name__)


@dataclass
class Episode:
    """One rolled episode over the family's padded agent slots.

    Observation-side arrays hold T + 1 entries (the last is the state after
    the final transition); transition arrays hold T entries.
    """
    obs_features: np.ndarray     # (T+1, A, M, d_e)
    obs_mask: np.ndarray         # (T+1, A, M) bool
    self_index: np.ndarray       # (T+1, A) int
    avail: np.ndarray            # (T+1, A, n_actions) bool
    state_features: np.ndarray   # (T+1, M, d_e)
    state_mask: np.ndarray       # (T+1, M) bool
    actions: np.ndarray          # (T, A) int
    rewards: np.ndarray          # (T,)
    terminated: np.ndarray       # (T,) bool, true only at a win
    agent_mask: np.ndarray       # (A,) bool
    task: Optional[TaskSpec] = None
    q_values: Optional[np.ndarray] = None         # (T, A, n_actions) at collection
    states: List[WorldState] = field(default_factory=list, repr=False)
    win: bool = False

    @property
    def length(self) -> int:
        return int(self.actions.shape[0])

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


def _pad_time(arr: np.ndarray, length: int) -> np.ndarray:
    """Pad along axis 0 to ``length`` by repeating the last entry."""
    if arr.shape[0] >= length:
        return arr[:length]
    reps = np.repeat(arr[-1:], length - arr.shape[0], axis=0)
    return np.concatenate([arr, reps], axis=0)


def _pad_fill(arr: np.ndarray, length: int, value) -> np.ndarray:
    if arr.shape[0] >= length:
        return arr[:length]
    pad = np.full((length - arr.shape[0],) + arr.shape[1:], value, dtype=arr.dtype)
    return np.concatenate([arr, pad], axis=0)


@dataclass
class EpisodeBatch:
    """Time-padded tensors for B episodes of at most T transitions.

    Padded observation steps repeat the final real step so every row keeps
    at least one visible entity; ``filled`` masks padded transitions out of
    every loss.
    """
    obs_features: torch.Tensor   # (B, T+1, A, M, d_e)
    obs_mask: torch.Tensor       # (B, T+1, A, M)
    self_index: torch.Tensor     # (B, T+1, A)
    avail: torch.Tensor          # (B, T+1, A, n_actions)
    state_features: torch.Tensor # (B, T+1, M, d_e)
    state_mask: torch.Tensor     # (B, T+1, M)
    actions: torch.Tensor        # (B, T, A)
    rewards: torch.Tensor        # (B, T)
    terminated: torch.Tensor     # (B, T)
    filled: torch.Tensor         # (B, T)
    agent_mask: torch.Tensor     # (B, A)

    @property
    def batch_size(self) -> int:
        return int(self.actions.shape[0])

    @property
    def max_len(self) -> int:
        return int(self.actions.shape[1])

    @classmethod
    def from_episodes(cls, episodes: Sequence[Episode], max_len: Optional[int] = None,
                      dtype: torch.dtype = torch.float32) -> "EpisodeBatch":
        if not episodes:
            raise ValueError("cannot batch zero episodes")
        t_max = max_len or max(ep.length for ep in episodes)

        def stack(fn):
            return np.stack([fn(ep) for ep in episodes], axis=0)

        filled = stack(lambda ep: _pad_fill(np.ones(ep.length, dtype=bool), t_max, False))
        return cls(
            obs_features=torch.as_tensor(stack(lambda ep: _pad_time(ep.obs_features, t_max + 1)), dtype=dtype),
            obs_mask=torch.as_tensor(stack(lambda ep: _pad_time(ep.obs_mask, t_max + 1))),
            self_index=torch.as_tensor(stack(lambda ep: _pad_time(ep.self_index, t_max + 1)), dtype=torch.long),
            avail=torch.as_tensor(stack(lambda ep: _pad_time(ep.avail, t_max + 1))),
            state_features=torch.as_tensor(stack(lambda ep: _pad_time(ep.state_features, t_max + 1)), dtype=dtype),
            state_mask=torch.as_tensor(stack(lambda ep: _pad_time(ep.state_mask, t_max + 1))),
            actions=torch.as_tensor(stack(lambda ep: _pad_fill(ep.actions, t_max, STOP)), dtype=torch.long),
            rewards=torch.as_tensor(stack(lambda ep: _pad_fill(ep.rewards, t_max, 0.0)), dtype=dtype),
            terminated=torch.as_tensor(stack(lambda ep: _pad_fill(ep.terminated, t_max, True))),
            filled=torch.as_tensor(filled),
            agent_mask=torch.as_tensor(stack(lambda ep: ep.agent_mask)),
        )


class ReplayBuffer:
    """FIFO store of whole episodes.

    Parameters
    ----------
    capacity : int
        Maximum number of episodes; the oldest is evicted first.
    """

    def __init__(self, capacity: int = 5000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._episodes: Deque[Episode] = deque(maxlen=capacity)
        self.n_inserted = 0

    def __len__(self) -> int:
        return len(self._episodes)

    def add(self, episode: Episode) -> None:
        self._episodes.append(episode)
        self.n_inserted += 1
        logger.debug(f"Buffer: {len(self)}/{self.capacity} episodes")

    def can_sample(self, batch_size: int) -> bool:
        return len(self) >= batch_size

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[Episode]:
        """Uniform sample without replacement, in buffer order."""
        if not self.can_sample(batch_size):
            raise ValueError(f"buffer holds {len(self)} episodes, need {batch_size}")
        idx = np.sort(rng.choice(len(self), size=batch_size, replace=False))
        return [self._episodes[i] for i in idx]

    def episodes(self) -> List[Episode]:
        return list(self._episodes)
