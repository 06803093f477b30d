import concurrent.futures as cf
from typing import Callable, Iterable, Optional, TypeVar

from src.shared.config import Settings
from src.shared.logging_config import get_logger

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def resolve_workers(workers: Optional[int]) -> int:
    if workers is None:
        workers = Settings.workers
    return max(1, int(workers))


def map_ordered(
    fn: Callable[[T], R],
    items: Iterable[T],
    workers: Optional[int] = None,
) -> list[R]:
    """
    Apply ``fn`` to every item on a bounded process pool.

    Results come back in input order whatever the completion order, so
    aggregates computed from them do not depend on the worker count.
    ``fn`` must be picklable (a module-level function or a partial of one).
    """
    items = list(items)
    workers = min(resolve_workers(workers), max(len(items), 1))
    if workers == 1:
        return [fn(item) for item in items]

    logger.debug("worker_pool_started", workers=workers, tasks=len(items))
    chunksize = max(1, len(items) // (4 * workers))
    with cf.ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunksize))
