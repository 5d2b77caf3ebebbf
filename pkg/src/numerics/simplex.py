"""Reference (numpy, double precision) simplex operations.

These are the exact single-vector versions of the activations used inside the
networks. The batched torch counterparts in ``torch_ops`` are tested against
them.

    sparsemax(z)   = argmin_{p in simplex} ||p - z||^2
    softmax(z)     = exp(z - max z) / sum(...)
    KL(p || q)     = sum_i p_i log(p_i / max(q_i, eps))
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class InvalidInputError(ValueError):
    """A numerical precondition was violated (non-finite, empty, mismatched)."""


@dataclass
class SupportResult:
    support_size: int
    threshold: float
    support_mask: np.ndarray


# ─────────────────────────────────────────────────────────────────────────────
# Input handling
# ─────────────────────────────────────────────────────────────────────────────

def _as_vector(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise InvalidInputError(f"expected a 1-d vector, got shape {z.shape}")
    return z


def _effective_mask(z: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is None:
        mask = np.ones(z.shape[0], dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != z.shape:
            raise InvalidInputError(f"mask shape {mask.shape} does not match input {z.shape}")
    if not mask.any():
        raise InvalidInputError("all positions are masked; nothing to normalise over")
    if not np.all(np.isfinite(z[mask])):
        raise InvalidInputError("input contains non-finite values")
    return mask


# ─────────────────────────────────────────────────────────────────────────────
# Sparsemax
# ─────────────────────────────────────────────────────────────────────────────

def sparsemax_support(z) -> SupportResult:
    """Support size and threshold of the simplex projection of ``z``.

    The support size is the largest m such that, on the descending-sorted
    vector, ``m * z_(m) > sum_{i<=m} z_(i) - 1``. The threshold is
    ``(sum_{i<=m} z_(i) - 1) / m``.
    """
    z = _as_vector(z)
    if z.shape[0] == 0:
        raise InvalidInputError("empty input vector")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("input contains non-finite values")

    order = np.argsort(-z, kind="stable")
    z_sorted = z[order]
    cssv = np.cumsum(z_sorted)
    k = np.arange(1, z.shape[0] + 1, dtype=np.float64)
    cond = k * z_sorted > cssv - 1.0
    m = int(np.nonzero(cond)[0][-1]) + 1     # cond[0] is always true
    threshold = float((cssv[m - 1] - 1.0) / m)

    support_mask = np.zeros(z.shape[0], dtype=bool)
    support_mask[order[:m]] = True
    return SupportResult(support_size=m, threshold=threshold, support_mask=support_mask)


def sparsemax(z, mask=None) -> np.ndarray:
    """Euclidean projection of the unmasked entries of ``z`` onto the simplex.

    Masked positions are dropped from the projection domain and come back as
    exact zeros. Entries at or below the threshold are exact zeros too.
    """
    z = _as_vector(z)
    mask = _effective_mask(z, mask)
    sub = z[mask]
    res = sparsemax_support(sub)
    out = np.zeros_like(z)
    out[mask] = np.maximum(sub - res.threshold, 0.0)
    return out


def sparsemax_backward(p, upstream) -> np.ndarray:
    """Vector-Jacobian product of sparsemax at output ``p``.

    On the support S the Jacobian is ``I - 1 1^T / |S|``; off the support it
    is zero.
    """
    p = _as_vector(p)
    g = _as_vector(upstream)
    if p.shape != g.shape:
        raise InvalidInputError(f"shape mismatch: p {p.shape} vs upstream {g.shape}")
    support = p > 0
    out = np.zeros_like(g)
    if support.any():
        gs = g[support]
        out[support] = gs - gs.mean()
    return out


# ─────────────────────────────────────────────────────────────────────────────
# Softmax / KL
# ─────────────────────────────────────────────────────────────────────────────

def softmax(z, mask=None) -> np.ndarray:
    """Max-subtracted softmax over the unmasked entries; masked entries are 0."""
    z = _as_vector(z)
    mask = _effective_mask(z, mask)
    sub = z[mask]
    e = np.exp(sub - sub.max())
    out = np.zeros_like(z)
    out[mask] = e / e.sum()
    return out


def categorical_kl(p, q, eps: float = 1e-8) -> float:
    """KL(p || q) with ``q`` clamped to ``>= eps`` inside the log.

    Terms with ``p_i == 0`` contribute nothing. The result is floored at 0;
    clamping can otherwise push it a few ulps negative.
    """
    p = _as_vector(p)
    q = _as_vector(q)
    if p.shape != q.shape:
        raise InvalidInputError(f"length mismatch: {p.shape[0]} vs {q.shape[0]}")
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    nz = p > 0
    qc = np.maximum(q[nz], eps)
    kl = float(np.sum(p[nz] * (np.log(p[nz]) - np.log(qc))))
    return max(kl, 0.0)
