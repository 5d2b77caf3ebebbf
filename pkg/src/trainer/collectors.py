"""Parallel episode collection on a thread pool.

Usage::

    pool = CollectorPool(collect_fn, max_workers=4)
    episodes = pool.collect([CollectorJob(0, task, eps, seed), ...])
    pool.shutdown()

Design notes:
    - Workers only read a parameter snapshot handed to ``collect_fn``; the
      training thread remains the single owner of the live networks.
    - Finished episodes are appended to one result list under a lock, so the
      hand-off has a single writer at a time. Completion order is not
      deterministic with more than one worker; single-collector runs are.
"""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, List, Optional

from env import TaskSpec

from .episode import Episode

logger = logging.getLogger(__name__)


class JobStatus(str, Enum):
    PENDING  = "pending"
    RUNNING  = "running"
    COMPLETE = "complete"
    FAILED   = "failed"


@dataclass
class CollectorJob:
    job_id:  int
    task:    TaskSpec
    epsilon: float
    seed:    Any
    status:  JobStatus = JobStatus.PENDING
    episode: Optional[Episode] = None
    error:   Optional[str] = None
    _future: Any = field(default=None, repr=False)


class CollectorPool:
    """Thread-pool backed episode collectors.

    Parameters
    ----------
    collect_fn : callable(CollectorJob) -> Episode
        Rolls one episode for the job's task, epsilon and seed.
    max_workers : int
        Number of concurrent collectors.
    """

    def __init__(self, collect_fn: Callable[[CollectorJob], Episode], max_workers: int = 2):
        self._collect_fn = collect_fn
        self._lock = threading.Lock()
        self._results: List[Episode] = []
        self._shutdown = False
        self._executor = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="collector")

    def collect(self, jobs: List[CollectorJob]) -> List[Episode]:
        """Run ``jobs`` and return their episodes in completion order."""
        with self._lock:
            if self._shutdown:
                raise RuntimeError("CollectorPool has been shut down")
            self._results = []
            for job in jobs:
                job._future = self._executor.submit(self._run_job, job)
        wait([job._future for job in jobs])

        failed = [job for job in jobs if job.status == JobStatus.FAILED]
        if failed:
            raise RuntimeError(f"{len(failed)} collector job(s) failed; first error: {failed[0].error}")
        with self._lock:
            return list(self._results)

    def shutdown(self, wait: bool = True) -> None:
        with self._lock:
            self._shutdown = True
        self._executor.shutdown(wait=wait)
        logger.info("CollectorPool shut down (wait=%s)", wait)

    def _run_job(self, job: CollectorJob) -> None:
        with self._lock:
            job.status = JobStatus.RUNNING
        try:
            episode = self._collect_fn(job)
            with self._lock:
                job.status = JobStatus.COMPLETE
                job.episode = episode
                self._results.append(episode)
        except Exception as exc:
            with self._lock:
                job.status = JobStatus.FAILED
                job.error = str(exc)
            logger.error("Collector job %d failed: %s", job.job_id, exc, exc_info=True)
