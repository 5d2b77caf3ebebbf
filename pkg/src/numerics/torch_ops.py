"""Batched, masked torch versions of the simplex operations.

All functions normalise over the last dimension. ``mask`` is a boolean tensor
broadcastable to the input; ``False`` positions are removed from the
normalisation domain and come back as exact zeros. Rows with no valid entry
produce all-zero output.
"""

from __future__ import annotations

from typing import Optional

import torch
from torch.autograd import Function


def _full_mask(z: torch.Tensor, mask: Optional[torch.Tensor]) -> torch.Tensor:
    if mask is None:
        return torch.ones_like(z, dtype=torch.bool)
    return mask.to(torch.bool).expand_as(z)


class MaskedSparsemaxFunction(Function):
    """Sparsemax over the last dim restricted to ``mask``.

    Backward is the support-restricted Jacobian ``g_S - mean(g_S)`` on the
    support and 0 elsewhere.
    """

    @staticmethod
    def forward(ctx, z: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        size = z.shape[-1]
        n_valid = mask.sum(dim=-1, keepdim=True)

        # -inf only orders the masked entries last; they never enter the sums
        z_sorted, _ = torch.sort(z.masked_fill(~mask, float("-inf")), dim=-1, descending=True)
        k = torch.arange(1, size + 1, dtype=z.dtype, device=z.device)
        in_range = k <= n_valid
        z_sorted = torch.where(in_range, z_sorted, torch.zeros_like(z_sorted))
        cssv = z_sorted.cumsum(dim=-1)
        cond = (k * z_sorted > cssv - 1) & in_range
        support = cond.sum(dim=-1, keepdim=True).clamp_min(1)
        tau = (cssv.gather(-1, support - 1) - 1) / support.to(z.dtype)

        out = torch.clamp(z - tau, min=0).masked_fill(~mask, 0.0)
        ctx.save_for_backward(out)
        return out

    @staticmethod
    def backward(ctx, grad_out: torch.Tensor):
        (out,) = ctx.saved_tensors
        supp = out > 0
        g = grad_out.masked_fill(~supp, 0.0)
        nnz = supp.sum(dim=-1, keepdim=True).clamp_min(1).to(g.dtype)
        g = (g - g.sum(dim=-1, keepdim=True) / nnz).masked_fill(~supp, 0.0)
        return g, None


def masked_sparsemax(z: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    return MaskedSparsemaxFunction.apply(z, _full_mask(z, mask))


def masked_softmax(z: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Softmax over unmasked entries. Strictly positive there only while the
    logit gap stays within the dtype range (about 100 in float32, 745 in float64).
    """
    mask = _full_mask(z, mask)
    filled = z.masked_fill(~mask, torch.finfo(z.dtype).min)
    return torch.softmax(filled, dim=-1) * mask.to(z.dtype)


def attention_activation(name: str):
    """Look up a masked row-normaliser by config name."""
    if name == "sparsemax":
        return masked_sparsemax
    if name == "softmax":
        return masked_softmax
    raise ValueError(f"unknown attention activation '{name}'")


def categorical_kl(p: torch.Tensor, q: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Row-wise KL(p || q) over the last dim, ``q`` clamped to ``>= eps``."""
    log_p = torch.log(p.clamp_min(eps))
    log_q = torch.log(q.clamp_min(eps))
    return (p * (log_p - log_q)).sum(dim=-1)
