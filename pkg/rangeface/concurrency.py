"""
Ordered thread-pool map used for per-subject and per-row work.
"""
from concurrent.futures import ThreadPoolExecutor

from django.conf import settings


def thread_count(threads=None):
    if threads is None:
        threads = getattr(settings, 'RANGEFACE_THREADS', 1)
    return max(1, int(threads))


def ordered_map(fn, items, threads=None):
    """
    Apply ``fn`` to every item and return the results in input order.

    With one thread this is a plain loop, so results are identical whatever
    the thread count.
    """
    items = list(items)
    workers = min(thread_count(threads), max(1, len(items)))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
