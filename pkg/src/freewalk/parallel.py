"""Deterministic replica-parallel map.

Results come back in task order whatever the worker count, and every replica draws
from its own ``(master_seed, replica)`` stream, so reductions are bit-identical for any
number of workers.
"""

from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get("FREEWALK_WORKERS")
        workers = int(env) if env else 1
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


def ordered_map(fn, tasks, workers: int | None = 1) -> list:
    tasks = list(tasks)
    workers = resolve_workers(workers)
    if workers == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    ctx = multiprocessing.get_context("fork")
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks)), mp_context=ctx) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))
