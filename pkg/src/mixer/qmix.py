"""Monotonic mixing of per-agent action values.

The global state passes through its own OPT stack. Hypernetworks then read
the restructured state:

    W1[a] = |h_w1(Y[a])|      one d_mix row per agent entity row
    b1    = h_b1(mean Y)
    w2    = |h_w2(mean Y)|
    b2    = h_b2(mean Y)
    Q_tot = ELU(q^T W1 + b1) w2 + b2

Emitting W1 per agent row lets one mixer serve any number of agents up to
the padding bound; absent agents are zeroed by ``agent_mask``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import torch
from torch import nn
import torch.nn.functional as F

from config import ModelConfig
from numerics import InvalidInputError
from opt import OPTStack, masked_mean

logger = logging.getLogger(__name__)


@dataclass
class MixerOutput:
    q_tot: torch.Tensor                                   # (B,)
    cd: torch.Tensor                                      # (B,)
    omegas: List[torch.Tensor] = field(default_factory=list)
    attention: List[torch.Tensor] = field(default_factory=list)


def _check_shapes(agent_qs: torch.Tensor, agent_mask: Optional[torch.Tensor]) -> torch.Tensor:
    if agent_qs.dim() != 2 or agent_qs.shape[1] < 1:
        raise InvalidInputError(f"agent_qs must be (B, A) with A >= 1, got {tuple(agent_qs.shape)}")
    if agent_mask is None:
        return torch.ones_like(agent_qs, dtype=torch.bool)
    if agent_mask.shape != agent_qs.shape:
        raise InvalidInputError(
            f"agent_mask shape {tuple(agent_mask.shape)} does not match agent_qs {tuple(agent_qs.shape)}"
        )
    return agent_mask.to(torch.bool)


def vdn_mix(agent_qs: torch.Tensor) -> torch.Tensor:
    """Sum over the last (agent) dimension."""
    if agent_qs.shape[-1] == 0:
        raise InvalidInputError("vdn_mix needs at least one agent value")
    return agent_qs.sum(dim=-1)


class VDNMixer(nn.Module):
    """Additive mixer; ignores the state."""

    def forward(self, agent_qs: torch.Tensor, state: torch.Tensor, state_mask: torch.Tensor,
                agent_mask: Optional[torch.Tensor] = None) -> MixerOutput:
        agent_mask = _check_shapes(agent_qs, agent_mask)
        q_tot = vdn_mix(torch.where(agent_mask, agent_qs, torch.zeros_like(agent_qs)))
        return MixerOutput(q_tot=q_tot, cd=torch.zeros_like(q_tot))


class OPTMixer(nn.Module):
    """QMIX-style mixer whose hypernetworks read the OPT-processed global state.

    Parameters
    ----------
    d_e : int
        Entity feature size of the global state.
    model : ModelConfig
        Network shape (``d_x``, ``d_mix``, ``hyper_hidden`` and OPT settings).
    """

    def __init__(self, d_e: int, model: ModelConfig):
        super().__init__()
        d, hh, dm = model.d_x, model.hyper_hidden, model.d_mix
        self.d_mix = dm
        self.stack = OPTStack(d_e, d, model.n_layers, model.n_prototypes, model.d_ff,
                              activation=model.activation, cosine_cd=model.cosine_cd)
        self.hyper_w1 = nn.Sequential(nn.Linear(d, hh), nn.ReLU(), nn.Linear(hh, dm))
        self.hyper_b1 = nn.Linear(d, dm)
        self.hyper_w2 = nn.Sequential(nn.Linear(d, hh), nn.ReLU(), nn.Linear(hh, dm))
        self.hyper_b2 = nn.Sequential(nn.Linear(d, hh), nn.ReLU(), nn.Linear(hh, 1))

    def forward(self, agent_qs: torch.Tensor, state: torch.Tensor, state_mask: torch.Tensor,
                agent_mask: Optional[torch.Tensor] = None) -> MixerOutput:
        """Mix chosen-action values.

        Parameters
        ----------
        agent_qs : Tensor
            (B, A) chosen-action values; agent ``a`` owns state row ``a``.
        state : Tensor
            (B, M, d_e) global entity features.
        state_mask : Tensor
            (B, M) live-entity mask.
        agent_mask : Tensor, optional
            (B, A) present-agent mask.
        """
        agent_mask = _check_shapes(agent_qs, agent_mask)
        bs, n_agents = agent_qs.shape
        if n_agents > state.shape[1]:
            raise InvalidInputError(f"{n_agents} agents but only {state.shape[1]} state rows")

        out = self.stack(state, state_mask)
        s_bar = masked_mean(out.y, state_mask)
        keep = agent_mask.to(agent_qs.dtype)

        w1 = torch.abs(self.hyper_w1(out.y[:, :n_agents])) * keep.unsqueeze(-1)   # (B, A, d_mix)
        b1 = self.hyper_b1(s_bar).view(bs, 1, self.d_mix)
        qs = (agent_qs * keep).unsqueeze(1)                                      # (B, 1, A)
        hidden = F.elu(torch.bmm(qs, w1) + b1)

        w2 = torch.abs(self.hyper_w2(s_bar)).view(bs, self.d_mix, 1)
        b2 = self.hyper_b2(s_bar).view(bs, 1, 1)
        q_tot = (torch.bmm(hidden, w2) + b2).view(bs)
        return MixerOutput(q_tot=q_tot, cd=out.cd, omegas=out.omegas, attention=out.attention)


def build_mixer(model: ModelConfig, d_e: int) -> nn.Module:
    if model.mixer == "qmix":
        return OPTMixer(d_e, model)
    if model.mixer == "vdn":
        return VDNMixer()
    raise ValueError(f"unknown mixer '{model.mixer}'")
