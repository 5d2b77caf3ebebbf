"""Epsilon-greedy action selection with availability masks."""

from __future__ import annotations

import numpy as np
import torch

from numerics import InvalidInputError


def epsilon_schedule(step: int, start: float = 1.0, end: float = 0.05, anneal_steps: int = 50_000) -> float:
    """Linear anneal from ``start`` to ``end`` over ``anneal_steps`` env steps, then flat."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if anneal_steps <= 0:
        return float(end)
    frac = min(step / anneal_steps, 1.0)
    return float(start + frac * (end - start))


def mask_unavailable(q: torch.Tensor, available: torch.Tensor) -> torch.Tensor:
    """Unavailable actions get ``-inf`` so they can never be the argmax."""
    return q.masked_fill(~available.to(torch.bool), float("-inf"))


def select_action(q, available, epsilon: float, rng: np.random.Generator) -> int:
    """Pick one action: uniform over available with prob ``epsilon``, else greedy.

    Greedy ties resolve to the lowest index.
    """
    q = np.asarray(q, dtype=np.float64)
    available = np.asarray(available, dtype=bool)
    if q.shape != available.shape:
        raise InvalidInputError(f"q shape {q.shape} does not match availability {available.shape}")
    if not available.any():
        raise InvalidInputError("no available action")
    if rng.random() < epsilon:
        return int(rng.choice(np.flatnonzero(available)))
    return int(np.argmax(np.where(available, q, -np.inf)))


def select_actions(q, available, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Row-wise ``select_action`` for (A, n_actions) inputs."""
    q = np.asarray(q)
    available = np.asarray(available, dtype=bool)
    return np.array([select_action(q[a], available[a], epsilon, rng) for a in range(q.shape[0])],
                    dtype=np.int64)
