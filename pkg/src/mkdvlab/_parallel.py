"""Deterministic worker pool helper.

Work items are mapped concurrently but results are always reduced in item
order, so outputs are identical for any worker count.  The TORUS_THREADS
environment variable caps the pool size; numeric kernels release the GIL in
their large array operations, so threads are the right tool here.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("TORUS_THREADS")
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap is not None:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


def ordered_map(fn, items, workers: int | None = None) -> list:
    """map(fn, items) with index-ordered results."""
    items = list(items)
    n_workers = worker_count(workers)
    if n_workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, items))
