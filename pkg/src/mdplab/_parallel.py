"""Counter-derived seeding and order-preserving parallel maps.

Every unit of work gets its generator from ``(seed, stream, index)`` alone,
so results do not depend on how many workers execute the units.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

_threads = 1


def set_threads(n: int) -> None:
    global _threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(n)


def get_threads() -> int:
    return _threads


def stream_id(name: str) -> int:
    return zlib.crc32(name.encode())


def derived_rng(seed: int, stream: str, *index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream_id(stream), *map(int, index)))
    return np.random.default_rng(ss)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    items = list(items)
    threads = _threads if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def chunk_sizes(total: int, per_chunk: int) -> Sequence[int]:
    per_chunk = max(1, int(per_chunk))
    full, rest = divmod(int(total), per_chunk)
    return [per_chunk] * full + ([rest] if rest else [])
