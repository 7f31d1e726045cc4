from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Iterator, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def derive_seed(master: int, *key: int) -> int:
    """Counter-based child seed: depends only on ``(master, key)``, never on scheduling."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def derived_rng(master: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def ordered_map(func: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> Iterator[R]:
    """Map in input order, optionally over a process pool."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        for item in items:
            yield func(item)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(func, items)
