"""Shared helpers: deterministic rng derivation, bounded parallelism."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def rng_for(*keys: int) -> np.random.Generator:
    """A generator keyed by a tuple of integers, stable across runs."""
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]))


def thread_budget() -> int:
    """Worker cap: BOTT_THREADS if set, else the logical core count."""
    raw = os.environ.get("BOTT_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError as e:
        raise ValueError(f"BOTT_THREADS must be an integer, got {raw!r}") from e
    if n < 1:
        raise ValueError(f"BOTT_THREADS must be >= 1, got {n}")
    return n


def parallel_map(fn: Callable[[T], R], items: Sequence[T] | Iterable[T]) -> list[R]:
    """Map fn over items with at most thread_budget() workers.

    Results keep input order, so output is identical to a plain map.
    """
    items = list(items)
    workers = min(thread_budget(), max(1, len(items)))
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
