"""Per-agent utility network.

    observation entities -> OPT stack -> mean-pool -> GRU cell -> Q head

The head reads the GRU state together with the agent's own row of the OPT
output, so every action value is tied to the self entity. All agents share
one network; identity enters only through the observation's self flag.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List

import torch
from torch import nn

from config import LossConfig, ModelConfig
from numerics.torch_ops import categorical_kl
from opt import CMIPosterior, OPTStack, masked_mean

logger = logging.getLogger(__name__)


@dataclass
class UtilityOutput:
    q: torch.Tensor                 # (B, n_actions), unmasked
    hidden: torch.Tensor            # (B, d_h)
    omegas: List[torch.Tensor]      # per layer (B, N)
    cd: torch.Tensor                # (B,)
    cmi: torch.Tensor               # (B,)
    attention: List[torch.Tensor]   # per layer (B, N, M, M)


@dataclass
class UtilitySequence:
    q: torch.Tensor                 # (S, T, n_actions)
    hidden: torch.Tensor            # (S, T, d_h), state after each step
    cd: torch.Tensor                # (S, T)
    cmi: torch.Tensor               # (S, T)


class UtilityNetwork(nn.Module):
    """Shared recurrent action-value network for decentralised execution.

    Parameters
    ----------
    d_e : int
        Entity feature size of the observations.
    n_actions : int
        Size of the action set.
    model : ModelConfig
        Network shape.
    kl_clamp : float
        Floor applied to the variational posterior inside the CMI KL.
    """

    def __init__(self, d_e: int, n_actions: int, model: ModelConfig, kl_clamp: float = LossConfig.kl_clamp):
        super().__init__()
        self.d_h = model.d_h
        self.n_actions = n_actions
        self.kl_clamp = kl_clamp
        self.stack = OPTStack(d_e, model.d_x, model.n_layers, model.n_prototypes, model.d_ff,
                              activation=model.activation, cosine_cd=model.cosine_cd)
        self.gru = nn.GRUCell(model.d_x, model.d_h)
        self.head = nn.Linear(model.d_h + model.d_x, n_actions)
        self.posterior = CMIPosterior(model.d_h, model.d_x, model.n_prototypes)

    def init_hidden(self, batch: int, dtype=None) -> torch.Tensor:
        dtype = dtype or self.head.weight.dtype
        return torch.zeros(batch, self.d_h, dtype=dtype, device=self.head.weight.device)

    def _encode(self, features: torch.Tensor, mask: torch.Tensor, self_index: torch.Tensor):
        out = self.stack(features, mask)
        rows = torch.arange(features.shape[0], device=features.device)
        return out, masked_mean(out.y, mask), out.y[rows, self_index]

    def forward(self, features: torch.Tensor, mask: torch.Tensor,
                self_index: torch.Tensor, h_prev: torch.Tensor) -> UtilityOutput:
        """One decentralised step.

        Parameters
        ----------
        features : Tensor
            (B, M, d_e) observed entity features.
        mask : Tensor
            (B, M) visibility mask; the self entity is always visible.
        self_index : Tensor
            (B,) long, row of the observing agent.
        h_prev : Tensor
            (B, d_h) previous GRU state (zeros at episode start).
        """
        out, pooled_y, self_row = self._encode(features, mask, self_index)
        h = self.gru(pooled_y, h_prev)
        q = self.head(torch.cat([h, self_row], dim=-1))

        q_post = self.posterior(h_prev, out.pooled[0])
        cmi = categorical_kl(out.omegas[0], q_post, eps=self.kl_clamp)
        return UtilityOutput(q=q, hidden=h, omegas=out.omegas, cd=out.cd, cmi=cmi,
                             attention=out.attention)

    def unroll(self, features: torch.Tensor, mask: torch.Tensor,
               self_index: torch.Tensor) -> UtilitySequence:
        """Run ``S`` independent sequences of ``T`` steps from a zero state.

        Same values as calling ``forward`` step by step: the OPT stack does
        not read the recurrent state, so it runs once over all S * T
        observations and only the GRU cell is iterated.

        features (S, T, M, d_e), mask (S, T, M), self_index (S, T).
        """
        s, t, m, d_e = features.shape
        out, pooled_y, self_row = self._encode(
            features.reshape(s * t, m, d_e), mask.reshape(s * t, m), self_index.reshape(s * t),
        )
        pooled_y = pooled_y.view(s, t, -1)

        h = self.init_hidden(s, dtype=features.dtype)
        states = [h]
        for k in range(t):
            h = self.gru(pooled_y[:, k], h)
            states.append(h)
        hidden = torch.stack(states[1:], dim=1)
        h_prev = torch.stack(states[:-1], dim=1)

        q = self.head(torch.cat([hidden, self_row.view(s, t, -1)], dim=-1))
        q_post = self.posterior(h_prev.reshape(s * t, -1), out.pooled[0])
        cmi = categorical_kl(out.omegas[0], q_post, eps=self.kl_clamp)
        return UtilitySequence(q=q, hidden=hidden, cd=out.cd.view(s, t), cmi=cmi.view(s, t))
