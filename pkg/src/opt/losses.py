"""Auxiliary objectives of the OPT block.

cd_loss  : contrastive disagreement between prototypes, per entity
           -log( exp(s_nn) / sum_i exp(s_ni) ),  s_ni = <P_n V_n [e], P_i V_i [e]>
cmi_loss : KL( p(omega | pooled obs) || q(omega | h_prev, pooled obs) )
"""

from __future__ import annotations

from typing import Optional

import torch
from torch import nn
import torch.nn.functional as F

from numerics.torch_ops import categorical_kl


def _reduce(values: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "none":
        return values
    if reduction == "mean":
        return values.mean()
    if reduction == "sum":
        return values.sum()
    raise ValueError(f"unknown reduction '{reduction}'")


def cd_loss(values: torch.Tensor, mask: Optional[torch.Tensor] = None,
            normalize: bool = False, reduction: str = "mean") -> torch.Tensor:
    """Contrastive disagreement over prototype outputs.

    Parameters
    ----------
    values : Tensor
        ``P_n V_n`` stacked as (B, N, M, d) or (N, M, d).
    mask : Tensor, optional
        (B, M) or (M,) entity mask; the average runs over unmasked entities.
    normalize : bool
        Unit-normalise each row before taking dot products.
    reduction : str
        ``"mean"`` over the batch, ``"sum"`` or ``"none"`` for (B,).
    """
    squeeze = values.dim() == 3
    if squeeze:
        values = values.unsqueeze(0)
        mask = None if mask is None else mask.unsqueeze(0)
    b, n, m, _ = values.shape
    if mask is None:
        mask = torch.ones(b, m, dtype=torch.bool, device=values.device)
    if normalize:
        values = F.normalize(values, dim=-1)

    sim = torch.einsum("bnmd,bimd->bmni", values, values)          # (B, M, N, N)
    diag = torch.diagonal(sim, dim1=-2, dim2=-1)                    # (B, M, N)
    per_entity = (torch.logsumexp(sim, dim=-1) - diag).mean(dim=-1)  # (B, M)

    w = mask.to(values.dtype)
    per_sample = (per_entity * w).sum(dim=-1) / w.sum(dim=-1).clamp_min(1.0)
    if squeeze and reduction == "none":
        return per_sample[0]
    return _reduce(per_sample, reduction)


class CMIPosterior(nn.Module):
    """Variational posterior q(omega | h_prev, pooled) as affine + softmax."""

    def __init__(self, d_h: int, d_x: int, n_prototypes: int):
        super().__init__()
        self.head = nn.Linear(d_h + d_x, n_prototypes)

    def forward(self, h_prev: torch.Tensor, pooled: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.head(torch.cat([h_prev, pooled], dim=-1)), dim=-1)


def cmi_loss(omega: torch.Tensor, q: torch.Tensor, eps: float = 1e-8,
             reduction: str = "mean") -> torch.Tensor:
    """KL(omega || q) row-wise; gradients reach both sides."""
    return _reduce(categorical_kl(omega, q, eps=eps), reduction)
