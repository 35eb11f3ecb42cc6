"""
shared/utils/parallel.py
Thread-pool map over independent work items (stays, experiment cells).
Results come back in input order, so parallel and serial runs produce identical outputs.
"""

import os
from typing import Callable, List, Sequence, TypeVar

from joblib import Parallel, delayed

T = TypeVar("T")
R = TypeVar("R")


def resolve_jobs(threads: int) -> int:
    """0 means every available core."""
    return threads if threads > 0 else (os.cpu_count() or 1)


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 0) -> List[R]:
    jobs = resolve_jobs(threads)
    if jobs == 1 or len(items) < 2:
        return [fn(item) for item in items]
    return Parallel(n_jobs=min(jobs, len(items)), prefer="threads")(delayed(fn)(item) for item in items)
