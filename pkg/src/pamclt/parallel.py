"""Thread fan-out with results returned in submission order."""

import threading
from concurrent.futures import ThreadPoolExecutor

_threads = 1
_local = threading.local()


def set_threads(n: int):
    global _threads
    _threads = max(1, int(n))


def get_threads() -> int:
    """Worker budget for the caller; 1 inside a pool worker to avoid oversubscription."""
    return 1 if getattr(_local, "inside", False) else _threads


def _run_inside(fn, item):
    _local.inside = True
    try:
        return fn(item)
    finally:
        _local.inside = False


def ordered_map(fn, items, threads=None):
    """``list(map(fn, items))`` on a thread pool; order (and so any reduction) is fixed."""
    items = list(items)
    n = get_threads() if threads is None else max(1, int(threads))
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda it: _run_inside(fn, it), items))
