"""Simplex projections, divergences and gradient checking."""

from .simplex import (
    InvalidInputError,
    SupportResult,
    categorical_kl,
    softmax,
    sparsemax,
    sparsemax_backward,
    sparsemax_support,
)
from .gradcheck import GradCheckReport, finite_difference_check

__all__ = [
    "InvalidInputError", "SupportResult", "categorical_kl", "softmax",
    "sparsemax", "sparsemax_backward", "sparsemax_support",
    "GradCheckReport", "finite_difference_check",
]
