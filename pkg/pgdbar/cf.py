"""concurrent.futures implementation"""

import concurrent.futures
import logging

from pgdbar import worker
from pgdbar.worker import init_worker, process_method

log = logging.getLogger(__name__)


def process_methods(
    methods,
    cfg,
    comparisons,
    analytical=None,
    num_workers=None,
    progress_bar=None,
):
    """Run PGD methods of one case, one method per task.

    Returns a dict mapping each method name to its (field, report) pair.
    With ``num_workers == 1`` the methods run in this process.
    """
    methods = list(methods)
    results = {}
    if not methods:
        return results

    if num_workers == 1:
        init_worker(cfg, comparisons, analytical)
        for name in methods:
            name, field, report = worker.process_method(name)
            results[name] = (field, report)
            if progress_bar is not None:
                progress_bar.update(1)
        return results

    num_workers = min(num_workers or len(methods), len(methods))
    log.debug("Starting %d worker processes", num_workers)
    with concurrent.futures.ProcessPoolExecutor(
        max_workers=num_workers,
        initializer=init_worker,
        initargs=(cfg, comparisons, analytical),
    ) as executor:
        futures = {executor.submit(process_method, name) for name in methods}

        while futures:
            done, futures = concurrent.futures.wait(
                futures, return_when=concurrent.futures.FIRST_COMPLETED
            )
            for future in done:
                name, field, report = future.result()
                results[name] = (field, report)
                log.info("%s finished at rank %d", name, report.final_rank)

            if progress_bar is not None:
                progress_bar.update(len(done))

    return results
