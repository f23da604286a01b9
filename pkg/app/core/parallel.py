"""Global worker count and a deterministic chunked thread map."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, TypeVar

from app.core.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")

_workers = max(1, int(settings.workers))


def set_workers(count: int) -> None:
    """Set the process-wide worker count used by every service."""
    global _workers
    if count is None or count <= 0:
        count = settings.workers
    _workers = max(1, int(count))
    logger.info(f"Worker count set to {_workers}")


def get_workers() -> int:
    """Return the process-wide worker count."""
    return _workers


def chunk_bounds(total: int, chunk_size: int) -> List[tuple]:
    """Split range(total) into consecutive (start, stop) pairs."""
    chunk_size = max(1, int(chunk_size))
    return [(start, min(start + chunk_size, total)) for start in range(0, total, chunk_size)]


def map_chunks(func: Callable[[int, int], T], total: int, chunk_size: int = 4096) -> List[T]:
    """
    Apply func(start, stop) over consecutive chunks of range(total).

    Results come back in chunk order regardless of the worker count, and
    chunk boundaries do not depend on it, so any reduction the caller does
    over the returned list is bitwise reproducible.
    """
    bounds = chunk_bounds(total, chunk_size)
    if _workers == 1 or len(bounds) <= 1:
        return [func(start, stop) for start, stop in bounds]
    with ThreadPoolExecutor(max_workers=_workers) as pool:
        return list(pool.map(lambda b: func(*b), bounds))
