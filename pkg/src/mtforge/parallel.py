"""Order-preserving parallel map.

Results are returned in input order regardless of worker count, so any
stage built on this helper produces identical output for ``workers=1``
and ``workers=N``. Callables must be picklable (module-level functions
or ``functools.partial`` over picklable state) when workers > 1.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunksize = max(1, len(items) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
