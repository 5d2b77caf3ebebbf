"""Multiply-accumulate counting for OPT forwards.

Usage:
    with count_macs() as counter:
        stack(features, mask)
    counter.total
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional


@dataclass
class MacCounter:
    total: int = 0
    by_op: Dict[str, int] = field(default_factory=dict)

    def add(self, op: str, macs: int) -> None:
        self.total += int(macs)
        self.by_op[op] = self.by_op.get(op, 0) + int(macs)


_ACTIVE: contextvars.ContextVar[Optional[MacCounter]] = contextvars.ContextVar(
    "opt_mac_counter", default=None
)


@contextmanager
def count_macs() -> Iterator[MacCounter]:
    counter = MacCounter()
    token = _ACTIVE.set(counter)
    try:
        yield counter
    finally:
        _ACTIVE.reset(token)


def record(op: str, macs: int) -> None:
    """Add ``macs`` to the active counter, if any."""
    counter = _ACTIVE.get()
    if counter is not None:
        counter.add(op, macs)
