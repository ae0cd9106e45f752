"""
Parallel Helpers

Order-preserving map over a thread pool. Results come back in input order, so
reductions over them stay deterministic whatever the scheduling.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar('T')
R = TypeVar('R')


def ordered_map(func: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """
    Apply ``func`` to every item, concurrently when ``threads > 1``.

    Args:
        func: Pure function to apply
        items: Inputs
        threads (int): Worker threads, 1 runs inline

    Returns:
        List of results in input order
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(func, items))
