"""Deterministic replica sharding.

Work is split into fixed-size shards whose boundaries depend only on the
replica count, never on the worker count; per-replica random streams are
derived from (label, replica index).  Shard results are merged in shard
order, so outputs are bit-identical for any number of workers.
"""

from __future__ import annotations

import multiprocessing
from concurrent.futures import ProcessPoolExecutor

SHARD_SIZE = 256


def make_shards(n_replicas: int, shard_size: int = SHARD_SIZE) -> list[tuple[int, int]]:
    """Half-open replica ranges [(0, s), (s, 2s), ...] covering n_replicas."""
    if n_replicas < 1:
        raise ValueError("n_replicas must be positive")
    shards = []
    start = 0
    while start < n_replicas:
        stop = min(start + shard_size, n_replicas)
        shards.append((start, stop))
        start = stop
    return shards


def run_shards(fn, shard_args: list, n_workers: int = 1) -> list:
    """Apply ``fn`` to each shard argument, returning results in shard order.

    ``fn`` must be a module-level function (picklable).  With one worker the
    shards run inline; otherwise a fork-based process pool is used, which
    inherits already-compiled kernels.
    """
    if n_workers <= 1 or len(shard_args) <= 1:
        return [fn(a) for a in shard_args]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=n_workers, mp_context=ctx) as pool:
        return list(pool.map(fn, shard_args))
