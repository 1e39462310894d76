"""Wall-clock measurement with the BLAS threadpool pinned to one thread."""

from __future__ import annotations

import time

from threadpoolctl import threadpool_limits


def time_median(fn, repeats: int = 5, warmup: int = 1) -> float:
    """Median of ``repeats`` timed calls after ``warmup`` untimed ones.

    Pinning BLAS to a single thread keeps timings comparable across hosts
    with different core counts and avoids thread-spinup noise in the first
    sample.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    samples = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            fn()
        for _ in range(repeats):
            start = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - start)
    samples.sort()
    mid = len(samples) // 2
    if len(samples) % 2:
        return samples[mid]
    return 0.5 * (samples[mid - 1] + samples[mid])
