"""Sparse prototype attention over entities.

One OPT layer maps an entity embedding X (B, M, d) with an entity mask (B, M)
to a restructured embedding of the same shape:

    Q_n, K_n, V_n = X W_Q^n, X W_K^n, X W_V^n           n = 1..N
    P_n           = act(Q_n K_n^T / sqrt(d))            act in {sparsemax, softmax}
    omega         = softmax(W_agg mean_pool(X) + b)
    Y             = X + sum_n omega_n P_n V_n
    Y_out         = Y + FF(Y)                           padded rows forced to 0

``act`` normalises each row over the unmasked columns only. The contrastive
disagreement term of every layer is returned alongside so the trainer can
add it to the objective.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import torch
from torch import nn
import torch.nn.functional as F

from numerics import InvalidInputError
from numerics.torch_ops import attention_activation

from .losses import cd_loss
from .op_counter import record

logger = logging.getLogger(__name__)


@dataclass
class EntityEmbedding:
    x: torch.Tensor        # (B, M, d)
    mask: torch.Tensor     # (B, M) bool, True = real entity


@dataclass
class PrototypeSet:
    attention: torch.Tensor   # (B, N, M, M), rows over unmasked columns
    values: torch.Tensor      # (B, N, M, d), P_n V_n


@dataclass
class LayerOutput:
    y: torch.Tensor
    omega: torch.Tensor       # (B, N)
    pooled: torch.Tensor      # (B, d), mean-pooled layer input
    cd: torch.Tensor          # (B,)
    prototypes: PrototypeSet


@dataclass
class StackOutput:
    y: torch.Tensor
    mask: torch.Tensor
    omegas: List[torch.Tensor]
    pooled: List[torch.Tensor]
    attention: List[torch.Tensor]
    cd: torch.Tensor          # (B,), averaged over layers


def _check_nonempty(mask: torch.Tensor) -> None:
    if not bool(mask.any(dim=-1).all()):
        raise InvalidInputError("every sample needs at least one unmasked entity")


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of the unmasked rows of ``x`` (B, M, d) -> (B, d)."""
    _check_nonempty(mask)
    w = mask.to(x.dtype).unsqueeze(-1)
    return (x * w).sum(dim=1) / w.sum(dim=1)


# ─────────────────────────────────────────────────────────────────────────────
# Entity embedding
# ─────────────────────────────────────────────────────────────────────────────

class EntityEncoder(nn.Module):
    """Row-wise affine map + ELU; padded rows come out as zeros."""

    def __init__(self, d_e: int, d_x: int):
        super().__init__()
        self.d_e = d_e
        self.linear = nn.Linear(d_e, d_x)

    def forward(self, raw: torch.Tensor, mask: torch.Tensor) -> EntityEmbedding:
        if raw.shape[-1] != self.d_e:
            raise InvalidInputError(f"expected {self.d_e} entity features, got {raw.shape[-1]}")
        if raw.shape[:-1] != mask.shape:
            raise InvalidInputError(f"mask shape {tuple(mask.shape)} does not match features {tuple(raw.shape)}")
        record("embed", raw.shape[0] * raw.shape[1] * self.d_e * self.linear.out_features)
        x = F.elu(self.linear(raw)) * mask.to(raw.dtype).unsqueeze(-1)
        return EntityEmbedding(x=x, mask=mask)


# ─────────────────────────────────────────────────────────────────────────────
# OPT layer
# ─────────────────────────────────────────────────────────────────────────────

class OPTLayer(nn.Module):
    """Interaction-prototype attention layer.

    Parameters
    ----------
    d_x : int
        Embedding / prototype dimension.
    n_prototypes : int
        Number N of prototype parameter triples.
    d_ff : int
        Hidden size of the entity-wise feed-forward.
    activation : str
        ``"sparsemax"`` or ``"softmax"``.
    cosine_cd : bool
        Unit-normalise rows before the CD similarities.
    """

    def __init__(self, d_x: int, n_prototypes: int, d_ff: int,
                 activation: str = "sparsemax", cosine_cd: bool = False):
        super().__init__()
        if n_prototypes < 1:
            raise ValueError("n_prototypes must be >= 1")
        self.d_x = d_x
        self.n_prototypes = n_prototypes
        self.activation = activation
        self.cosine_cd = cosine_cd
        self._act = attention_activation(activation)

        std = d_x ** -0.5
        self.w_q = nn.Parameter(torch.randn(n_prototypes, d_x, d_x) * std)
        self.w_k = nn.Parameter(torch.randn(n_prototypes, d_x, d_x) * std)
        self.w_v = nn.Parameter(torch.randn(n_prototypes, d_x, d_x) * std)
        self.aggregator = nn.Linear(d_x, n_prototypes)
        self.ff = nn.Sequential(nn.Linear(d_x, d_ff), nn.ELU(), nn.Linear(d_ff, d_x))

    def project_qkv(self, x: torch.Tensor):
        """Per-prototype projections, each (B, N, M, d)."""
        b, m, d = x.shape
        record("qkv", 3 * b * self.n_prototypes * m * d * d)
        q = torch.einsum("bmd,nde->bnme", x, self.w_q)
        k = torch.einsum("bmd,nde->bnme", x, self.w_k)
        v = torch.einsum("bmd,nde->bnme", x, self.w_v)
        return q, k, v

    def disentangle(self, x: torch.Tensor, mask: torch.Tensor) -> PrototypeSet:
        _check_nonempty(mask)
        q, k, v = self.project_qkv(x)
        b, n, m, d = q.shape
        record("attention", 2 * b * n * m * m * d)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.d_x)
        col_mask = mask[:, None, None, :]
        row_mask = mask[:, None, :, None].to(x.dtype)
        attn = self._act(logits, col_mask) * row_mask
        return PrototypeSet(attention=attn, values=attn @ v)

    def aggregate_weights(self, x: torch.Tensor, mask: torch.Tensor):
        pooled = masked_mean(x, mask)
        record("aggregate", x.shape[0] * self.d_x * self.n_prototypes)
        omega = torch.softmax(self.aggregator(pooled), dim=-1)
        return pooled, omega

    def restructure(self, prototypes: PrototypeSet, omega: torch.Tensor) -> torch.Tensor:
        return torch.einsum("bn,bnmd->bmd", omega, prototypes.values)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> LayerOutput:
        prototypes = self.disentangle(x, mask)
        pooled, omega = self.aggregate_weights(x, mask)
        y = x + self.restructure(prototypes, omega)
        b, m, d = y.shape
        record("feed_forward", 2 * b * m * d * self.ff[0].out_features)
        y = (y + self.ff(y)) * mask.to(y.dtype).unsqueeze(-1)
        cd = cd_loss(prototypes.values, mask, normalize=self.cosine_cd, reduction="none")
        return LayerOutput(y=y, omega=omega, pooled=pooled, cd=cd, prototypes=prototypes)


class OPTStack(nn.Module):
    """Entity encoder followed by ``n_layers`` OPT layers."""

    def __init__(self, d_e: int, d_x: int, n_layers: int, n_prototypes: int, d_ff: int,
                 activation: str = "sparsemax", cosine_cd: bool = False):
        super().__init__()
        self.encoder = EntityEncoder(d_e, d_x)
        self.layers = nn.ModuleList(
            OPTLayer(d_x, n_prototypes, d_ff, activation=activation, cosine_cd=cosine_cd)
            for _ in range(n_layers)
        )

    @property
    def n_prototypes(self) -> int:
        return self.layers[0].n_prototypes

    def forward(self, raw: torch.Tensor, mask: torch.Tensor,
                embedding: Optional[EntityEmbedding] = None) -> StackOutput:
        emb = embedding if embedding is not None else self.encoder(raw, mask)
        x = emb.x
        omegas, pooled, attention, cds = [], [], [], []
        for layer in self.layers:
            out = layer(x, mask)
            x = out.y
            omegas.append(out.omega)
            pooled.append(out.pooled)
            attention.append(out.prototypes.attention)
            cds.append(out.cd)
        cd = torch.stack(cds, dim=0).mean(dim=0)
        return StackOutput(y=x, mask=mask, omegas=omegas, pooled=pooled,
                           attention=attention, cd=cd)
