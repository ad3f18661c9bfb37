import math
import multiprocessing
from multiprocessing import cpu_count


class Parallel:
    def __init__(self, items, options):
        self.items = items
        self.options = options


def get_worker_cnt(worker_cnt=None):
    """Resolve the number of workers (all cores but one by default)."""
    if worker_cnt is None:
        if cpu_count() == 1:
            return 1
        return cpu_count() - 1
    assert isinstance(worker_cnt, int) and worker_cnt >= 1, \
        "The number of workers should be passed as a positive integer value."
    return worker_cnt


def create_workers(items, worker_cnt=None, **options):
    """Split ``items`` into contiguous batches, one worker per batch."""
    core_cnt = min(get_worker_cnt(worker_cnt), max(len(items), 1))

    # Batch size
    batch_size = math.ceil(len(items) / core_cnt)

    workers = []
    start_i = 0
    end_i = batch_size

    for i in range(0, core_cnt):
        # On the last iteration ensure that all the rest will be added
        if i == core_cnt - 1:
            selection = items[start_i:]
        else:
            selection = items[start_i:end_i]

        workers.append(Parallel(items=selection, options=options))

        # Update indices
        start_i += batch_size
        end_i += batch_size

    return workers


def run_parallel(func, items, worker_cnt=None, **options):
    """
    Apply ``func(worker)`` to every batch and concatenate the results in input order.

    ``func`` receives a :class:`Parallel` instance and returns a list with one
    result per item. With a single worker everything runs in this process.
    The output is identical for any worker count as long as ``func`` treats
    items independently.
    """
    workers = create_workers(list(items), worker_cnt=worker_cnt, **options)
    if len(workers) == 1:
        results = [func(workers[0])]
    else:
        with multiprocessing.Pool(len(workers)) as pool:
            results = pool.map(func, workers)

    out = []
    for batch in results:
        out.extend(batch)
    return out
