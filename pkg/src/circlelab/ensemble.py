"""Deterministic fan-out of per-path work over a thread pool."""
import os
from concurrent.futures import ThreadPoolExecutor


def worker_count():
    env = os.environ.get("LAB_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("LAB_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def map_paths(fn, indices, threads=None):
    """[fn(i) for i in indices], computed in parallel, returned in index order.

    Every result depends only on its own index, so the merge is identical for
    any worker count.
    """
    indices = list(indices)
    threads = worker_count() if threads is None else threads
    if threads <= 1 or len(indices) <= 1:
        return [fn(i) for i in indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, indices))
