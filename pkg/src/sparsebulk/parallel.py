"""Order-preserving process-parallel map used for Monte Carlo batches."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

THREADS_ENV = "SPARSEBULK_THREADS"


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def pmap(func, items, threads: int | None = None) -> list:
    """``[func(x) for x in items]`` computed with up to ``threads`` worker processes.

    Results come back in input order, so reductions over them are independent of
    scheduling.
    """
    items = list(items)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as ex:
        return list(ex.map(func, items))
