"""Deterministic chunked execution, optionally across threads.

Chunk boundaries depend only on the chunk size, never on the worker
count, so results are bitwise identical for any ``threads`` value (the
forward passes run under no_grad and share only read-only parameters).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def map_chunks(fn, n: int, chunk: int, threads: int = 1) -> list:
    """Apply ``fn(start, stop)`` over [0, n) in fixed chunks; ordered results."""
    spans = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    if threads <= 1 or len(spans) <= 1:
        return [fn(s, e) for s, e in spans]
    results = [None] * len(spans)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {pool.submit(fn, s, e): i for i, (s, e) in enumerate(spans)}
        for fut, i in futures.items():
            results[i] = fut.result()
    return results
