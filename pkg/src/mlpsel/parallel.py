"""Order-preserving process-pool map; results never depend on the worker count."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

JOBS_ENV = "MLPSEL_JOBS"


def resolve_jobs(jobs=None) -> int:
    """Explicit value, else ``$MLPSEL_JOBS``, else the number of CPUs."""
    if jobs is None:
        env = os.environ.get(JOBS_ENV)
        if env:
            jobs = int(env)
        else:
            jobs = os.cpu_count() or 1
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    return jobs


def parallel_map(fn, items, jobs: int = 1) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))
