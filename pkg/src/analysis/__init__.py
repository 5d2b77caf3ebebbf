"""Verification suites and prototype export."""

from .checks import SUITES, CheckResult, project_simplex_oracle, run_suite
from .prototypes import dump_prototypes, max_row_sum_error, sparsity_fraction, write_prototype_dump

__all__ = [
    "SUITES", "CheckResult", "project_simplex_oracle", "run_suite",
    "dump_prototypes", "max_row_sum_error", "sparsity_fraction", "write_prototype_dump",
]
