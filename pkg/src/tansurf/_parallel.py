"""Thread fan-out for independent per-cell work."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

A = TypeVar("A")
B = TypeVar("B")


def worker_count() -> int:
    """``TANSURF_THREADS`` if set, otherwise the CPU count."""
    env = os.environ.get("TANSURF_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"TANSURF_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ValueError("TANSURF_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[A], B], items: Iterable[A], workers: int | None = None) -> list[B]:
    """``[fn(i) for i in items]`` spread over a thread pool; order is preserved."""
    items = list(items)
    n = worker_count() if workers is None else workers
    if n <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
