"""Deterministic chunked execution over Monte Carlo paths."""

import os
from concurrent.futures import ThreadPoolExecutor

DEFAULT_CHUNK = 256


def resolve_threads(threads=None):
    """Explicit argument, then ``FRACEULER_THREADS``, then 1."""
    if threads is None:
        env = os.environ.get("FRACEULER_THREADS")
        threads = int(env) if env else 1
    threads = int(threads)
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return threads


def chunks(n_items, chunk_size=DEFAULT_CHUNK):
    """Fixed ``(start, count)`` partition; independent of the thread count."""
    chunk_size = max(1, int(chunk_size))
    return [(s, min(chunk_size, n_items - s)) for s in range(0, n_items, chunk_size)]


def map_chunks(fn, n_items, chunk_size=DEFAULT_CHUNK, threads=None):
    """Apply ``fn(start, count)`` to every chunk and return results in order."""
    parts = chunks(n_items, chunk_size)
    threads = resolve_threads(threads)
    if threads == 1 or len(parts) == 1:
        return [fn(s, c) for s, c in parts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda sc: fn(*sc), parts))
