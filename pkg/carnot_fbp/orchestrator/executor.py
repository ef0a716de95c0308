import logging
import os
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional

from ..interfaces import IScheduler

logger = logging.getLogger(__name__)

THREADS_ENV = "CARNOT_FBP_THREADS"


def resolve_thread_count(requested: Optional[int] = None) -> int:
    """--threads flag, then CARNOT_FBP_THREADS, then the hardware count."""
    if requested:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning(f"Ignoring non-integer {THREADS_ENV}={env!r}")
    return os.cpu_count() or 1


class ThreadExecutor(IScheduler):
    """
    Fixed thread pool. numpy/scipy kernels release the GIL, so independent
    solves overlap; results are always gathered in submission order.
    """

    def __init__(self, max_workers: Optional[int] = None):
        self.max_workers = resolve_thread_count(max_workers)
        self._pool = ThreadPoolExecutor(max_workers=self.max_workers, thread_name_prefix="CarnotWorker")

    def submit(self, fn: Callable, *args, **kwargs) -> Future:
        return self._pool.submit(fn, *args, **kwargs)

    def shutdown(self, wait: bool = True):
        self._pool.shutdown(wait=wait)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.shutdown(wait=True)


def run_all(fn: Callable, items: Iterable, scheduler: Optional[IScheduler] = None) -> List:
    """Run fn over items on the scheduler if given, else inline; order preserved."""
    items = list(items)
    if scheduler is None:
        return [fn(item) for item in items]
    futures = [scheduler.submit(fn, item) for item in items]
    return [f.result() for f in futures]
