"""Multiply-accumulate instrumentation.

Every matrix product routed through :func:`fastattn.core.matmul` reports
``m * k * p`` MACs to whichever counters are active on the current thread.
Elementwise additions that the cost model tracks explicitly (bias terms,
sliding-window context sums) are reported separately as ``adds``. Other
elementwise work (activations, row normalization, interpolation) is
deliberately not tallied; the analytic model accounts for those on its own
where it cares.

Counters nest: with two ``count_ops()`` scopes open, an operation inside the
inner scope is tallied by both. Counter state is thread-local, so concurrent
forwards on different threads do not interleave counts.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass


@dataclass
class OpCount:
    """Tally of multiply-accumulates and standalone additions."""

    macs: int = 0
    adds: int = 0

    @property
    def flops(self) -> int:
        """Total under the 1 MAC = 1 FLOP convention."""
        return self.macs + self.adds


_local = threading.local()


def _stack() -> list[OpCount]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def tally_macs(count: int) -> None:
    for tally in _stack():
        tally.macs += count


def tally_adds(count: int) -> None:
    for tally in _stack():
        tally.adds += count


@contextmanager
def count_ops():
    """Context manager yielding an :class:`OpCount` that tallies ops inside it.

    >>> with count_ops() as ops:
    ...     _ = matmul(a, b)          # doctest: +SKIP
    >>> ops.macs                      # doctest: +SKIP
    """
    tally = OpCount()
    stack = _stack()
    stack.append(tally)
    try:
        yield tally
    finally:
        stack.remove(tally)
