"""
Parallel Helpers
Chunked thread-pool mapping with results returned in submission order
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar('T')

THREADS_ENV_VAR = 'CUTMG_THREADS'
MIN_CHUNK_SIZE = 64  # Below this many items per worker the pool overhead dominates


def resolve_threads(threads: Optional[int] = None) -> int:
    """
    Resolve the worker count from an explicit value or the environment

    Args:
        threads: Explicit thread count (takes precedence when given)

    Returns:
        Thread count >= 1
    """
    if threads is None:
        raw = os.getenv(THREADS_ENV_VAR)
        if raw:
            try:
                threads = int(raw)
            except ValueError:
                logger.warning(f"Ignoring non-integer {THREADS_ENV_VAR}={raw!r}")
                threads = 1
        else:
            threads = 1
    return max(1, int(threads))


def chunk_slices(n_items: int, n_chunks: int) -> List[slice]:
    """Split range(n_items) into at most n_chunks contiguous slices"""
    n_chunks = max(1, min(n_chunks, n_items))
    bounds = [round(k * n_items / n_chunks) for k in range(n_chunks + 1)]
    return [slice(bounds[k], bounds[k + 1]) for k in range(n_chunks)]


def map_chunks(fn: Callable[[slice], T], n_items: int, threads: int = 1) -> List[T]:
    """
    Apply fn to contiguous chunks of range(n_items)

    Results come back in chunk order, so callers that scatter them sequentially
    produce the same output for every thread count.

    Args:
        fn: Function of a slice
        n_items: Number of items to split
        threads: Worker count; 1 runs inline

    Returns:
        List of per-chunk results
    """
    if n_items == 0:
        return []
    n_chunks = min(threads, max(1, n_items // MIN_CHUNK_SIZE))
    if threads <= 1 or n_chunks <= 1:
        return [fn(slice(0, n_items))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunk_slices(n_items, n_chunks)))


def map_items(fn: Callable[[T], object], items: Sequence[T], threads: int = 1) -> list:
    """Apply fn to every item, in parallel when threads > 1, preserving order"""
    if threads <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
