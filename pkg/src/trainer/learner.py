"""Batched optimisation of the total objective.

    total = L_td + alpha * L_cd + beta * L_cmi

L_td uses targets from the target networks: each agent's greedy next action
under the target utility network, mixed by the target mixer. L_cd averages
the per-layer contrastive term over agents/steps (utility site) and over
steps (mixer site), then across the two sites. L_cmi is the first-layer KL
of the utility network averaged over present agents and filled steps.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import torch
from torch import nn

from agent import UtilityNetwork, mask_unavailable
from config import RunConfig
from mixer import VDNMixer, build_mixer, compute_td_targets, sync_target, td_loss

from .episode import EpisodeBatch, ReplayBuffer

logger = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class LossBreakdown:
    td: torch.Tensor
    cd: torch.Tensor
    cmi: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {
            "td_loss": float(self.td.detach()),
            "cd_loss": float(self.cd.detach()),
            "cmi_loss": float(self.cmi.detach()),
            "total_loss": float(self.total.detach()),
        }


@dataclass
class Unrolled:
    q: torch.Tensor        # (B, T+1, A, n_actions)
    cd: torch.Tensor       # (B, T+1, A)
    cmi: torch.Tensor      # (B, T+1, A)


def _masked_mean(values: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    w = weights.to(values.dtype)
    return (values * w).sum() / w.sum().clamp_min(1.0)


class OPTLearner:
    """Owns the live/target networks and the optimiser.

    Parameters
    ----------
    cfg : RunConfig
        Full run configuration (model shape, loss coefficients, optimiser).
    d_e : int
        Entity feature size.
    n_actions : int
        Size of the action set.
    """

    def __init__(self, cfg: RunConfig, d_e: int, n_actions: int):
        self.cfg = cfg
        self.dtype = DTYPES[cfg.train.dtype]
        self.agent = UtilityNetwork(d_e, n_actions, cfg.model, kl_clamp=cfg.loss.kl_clamp).to(self.dtype)
        self.mixer = build_mixer(cfg.model, d_e).to(self.dtype)
        self.target_agent = copy.deepcopy(self.agent)
        self.target_mixer = copy.deepcopy(self.mixer)
        for p in list(self.target_agent.parameters()) + list(self.target_mixer.parameters()):
            p.requires_grad_(False)

        self.params = list(self.agent.parameters()) + list(self.mixer.parameters())
        t = cfg.train
        self.optimizer = torch.optim.RMSprop(self.params, lr=t.lr, alpha=t.rms_alpha, eps=t.rms_eps)
        self.alpha = cfg.loss.effective_alpha
        self.beta = cfg.loss.effective_beta
        self.n_updates = 0
        self.n_syncs = 0

    # ------------------------------------------------------------------
    # Forward passes
    # ------------------------------------------------------------------

    @staticmethod
    def unroll(agent: UtilityNetwork, batch: EpisodeBatch) -> Unrolled:
        """Run the utility network over all T + 1 observation steps."""
        b, t1, a, m, d_e = batch.obs_features.shape
        # one sequence per (episode, agent slot)
        seq = agent.unroll(
            batch.obs_features.transpose(1, 2).reshape(b * a, t1, m, d_e),
            batch.obs_mask.transpose(1, 2).reshape(b * a, t1, m),
            batch.self_index.transpose(1, 2).reshape(b * a, t1),
        )
        return Unrolled(
            q=seq.q.view(b, a, t1, -1).transpose(1, 2),
            cd=seq.cd.view(b, a, t1).transpose(1, 2),
            cmi=seq.cmi.view(b, a, t1).transpose(1, 2),
        )

    @staticmethod
    def mix(mixer: nn.Module, chosen_q: torch.Tensor, state: torch.Tensor,
            state_mask: torch.Tensor, agent_mask: torch.Tensor):
        """Mix (B, T, A) chosen values over (B, T, M, d_e) states."""
        b, t, a = chosen_q.shape
        m, d_e = state.shape[-2:]
        out = mixer(
            chosen_q.reshape(b * t, a),
            state.reshape(b * t, m, d_e),
            state_mask.reshape(b * t, m),
            agent_mask.unsqueeze(1).expand(b, t, a).reshape(b * t, a),
        )
        return out.q_tot.view(b, t), out.cd.view(b, t)

    def compute_losses(self, batch: EpisodeBatch) -> LossBreakdown:
        t = batch.max_len
        gamma = self.cfg.train.gamma

        live = self.unroll(self.agent, batch)
        chosen = live.q[:, :t].gather(-1, batch.actions.unsqueeze(-1)).squeeze(-1)
        q_tot, mixer_cd = self.mix(self.mixer, chosen, batch.state_features[:, :t],
                                   batch.state_mask[:, :t], batch.agent_mask)

        with torch.no_grad():
            target = self.unroll(self.target_agent, batch)
            next_q = target.q[:, 1:]
            greedy = mask_unavailable(next_q, batch.avail[:, 1:]).argmax(dim=-1, keepdim=True)
            next_chosen = next_q.gather(-1, greedy).squeeze(-1)
            next_q_tot, _ = self.mix(self.target_mixer, next_chosen, batch.state_features[:, 1:],
                                     batch.state_mask[:, 1:], batch.agent_mask)
        targets = compute_td_targets(batch.rewards, batch.terminated, next_q_tot, gamma)
        td = td_loss(q_tot, targets, batch.filled)

        agent_w = batch.filled.unsqueeze(-1) & batch.agent_mask.unsqueeze(1)
        cd = _masked_mean(live.cd[:, :t], agent_w)
        if not isinstance(self.mixer, VDNMixer):
            cd = 0.5 * (cd + _masked_mean(mixer_cd, batch.filled))
        cmi = _masked_mean(live.cmi[:, :t], agent_w)

        total = td + self.alpha * cd + self.beta * cmi
        return LossBreakdown(td=td, cd=cd, cmi=cmi, total=total)

    # ------------------------------------------------------------------
    # Optimisation
    # ------------------------------------------------------------------

    def train_step(self, buffer: ReplayBuffer, rng: np.random.Generator) -> Optional[LossBreakdown]:
        """One gradient step on a sampled batch; ``None`` if the buffer is not ready."""
        bs = self.cfg.train.batch_size
        if not buffer.can_sample(bs):
            return None
        batch = EpisodeBatch.from_episodes(buffer.sample(bs, rng), dtype=self.dtype)
        return self.update(batch)

    def update(self, batch: EpisodeBatch) -> Optional[LossBreakdown]:
        losses = self.compute_losses(batch)
        if not torch.isfinite(losses.total):
            logger.warning(f"Non-finite loss at update {self.n_updates}: {losses.as_floats()}; step skipped")
            return losses

        self.optimizer.zero_grad()
        losses.total.backward()
        grad_norm = nn.utils.clip_grad_norm_(self.params, self.cfg.train.grad_clip)
        self.optimizer.step()
        self.n_updates += 1
        logger.debug(f"Update {self.n_updates}: {losses.as_floats()} grad_norm={float(grad_norm):.3f}")

        if self.n_updates % self.cfg.train.target_interval == 0:
            self.sync_targets()
        return losses

    def sync_targets(self) -> None:
        sync_target(self.agent, self.target_agent)
        sync_target(self.mixer, self.target_mixer)
        self.n_syncs += 1
        logger.debug(f"Target networks synced (#{self.n_syncs}) at update {self.n_updates}")

    # ------------------------------------------------------------------
    # Persistence
    # ------------------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "agent": self.agent.state_dict(),
            "mixer": self.mixer.state_dict(),
            "target_agent": self.target_agent.state_dict(),
            "target_mixer": self.target_mixer.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "n_updates": self.n_updates,
            "n_syncs": self.n_syncs,
        }

    def load_state_dict(self, state: dict) -> None:
        self.agent.load_state_dict(state["agent"])
        self.mixer.load_state_dict(state["mixer"])
        self.target_agent.load_state_dict(state["target_agent"])
        self.target_mixer.load_state_dict(state["target_mixer"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.n_updates = int(state.get("n_updates", 0))
        self.n_syncs = int(state.get("n_syncs", 0))
