"""Deterministic worker-pool map for Monte-Carlo grid shards.

Each shard owns its own seeded substream, so results are identical whether
the map runs inline or across processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, items, workers: int = 1):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    chunksize = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunksize))
