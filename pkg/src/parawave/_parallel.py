import os
from concurrent.futures import ThreadPoolExecutor

WORKERS_ENV = "PARAWAVE_WORKERS"


def worker_count(workers=None) -> int:
    if workers is None:
        workers = os.environ.get(WORKERS_ENV, "1")
    workers = int(workers)
    if workers < 1:
        raise ValueError(f"worker count must be positive, got {workers}")
    return workers


def pmap(func, items, workers=None) -> list:
    """Ordered map; threads only help where numpy/scipy release the GIL."""
    items = list(items)
    n = worker_count(workers)
    if n == 1 or len(items) < 2:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items))
