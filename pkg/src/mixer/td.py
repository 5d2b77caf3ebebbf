"""One-step TD targets, masked TD loss and hard target-network sync."""

from __future__ import annotations

import torch
from torch import nn


def compute_td_targets(rewards: torch.Tensor, terminated: torch.Tensor,
                       next_q_tot: torch.Tensor, gamma: float) -> torch.Tensor:
    """``y = r + gamma * (1 - terminated) * Q_tot'`` with ``Q_tot'`` detached.

    ``terminated`` marks true terminal steps only (every prey captured), where
    ``y = r``. An episode cut at the horizon ends with ``done`` set but
    ``terminated`` clear, so its last step still bootstraps from ``Q_tot'``.
    Collectors store ``StepResult.terminated``, never ``StepResult.done``.
    """
    not_done = 1.0 - terminated.to(rewards.dtype)
    return rewards + gamma * not_done * next_q_tot.detach()


def td_loss(q_tot: torch.Tensor, targets: torch.Tensor, filled: torch.Tensor) -> torch.Tensor:
    """Mean squared TD error over filled (non-padded) timesteps."""
    w = filled.to(q_tot.dtype)
    err = (q_tot - targets.detach()) ** 2
    return (err * w).sum() / w.sum().clamp_min(1.0)


@torch.no_grad()
def sync_target(live: nn.Module, target: nn.Module) -> nn.Module:
    """Hard copy of every parameter and buffer of ``live`` into ``target``."""
    target.load_state_dict(live.state_dict())
    return target
