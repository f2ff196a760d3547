"""Execution substrate: seeded random streams, an ordered worker pool and timers.

This is the only module that creates concurrency.  Everything built on it
stays a function of (dataset, config, seed): each task draws from a random
stream derived from its own key, and results come back in input order.
"""

from __future__ import annotations

import logging
import multiprocessing
import os
import statistics
import time
import zlib
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

WORKERS_ENV = "BAYESTREE_WORKERS"


def _tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream_seed(seed: int, tag: str, index: int = 0, round: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed),
                                  spawn_key=(_tag_id(tag), int(index), int(round)))


def rng_stream(seed: int, tag: str, index: int = 0, round: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, tag, index, round)``.

    The key is hashed into a Philox key, so any worker can build its stream
    without coordinating with the others, and the same key gives the same
    sequence in every process.
    """
    return np.random.Generator(np.random.Philox(stream_seed(seed, tag, index, round)))


def derive_seed(seed: int, tag: str, index: int = 0) -> int:
    """A fresh 64-bit seed for a nested run, e.g. one cross-validation fold."""
    return int(stream_seed(seed, tag, index).generate_state(1, np.uint64)[0])


def resolve_workers(cap: Optional[int] = None, requested: Optional[int] = None) -> int:
    """Pool size: explicit request, else ``BAYESTREE_WORKERS``, else the core count.

    The result is capped at ``cap`` (the number of particles or shards).
    """
    n = requested
    if n is None:
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                n = int(env)
            except ValueError:
                raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {env!r}")
            if n < 1:
                raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {env!r}")
        else:
            n = os.cpu_count() or 1
    if cap is not None:
        n = min(n, max(1, cap))
    return max(1, n)


class TaskError(RuntimeError):
    def __init__(self, index: int, error: BaseException):
        super().__init__(f"task {index} failed: {error!r}")
        self.index = index
        self.error = error


# context installed in each worker process by the pool initializer
_CONTEXT: Any = None


def _install_context(context):
    global _CONTEXT
    _CONTEXT = context


def _call_with_context(fn, item):
    return fn(_CONTEXT, item)


class WorkerPool:
    """A bounded pool mapping ``fn(context, item)`` over items in order.

    ``context`` is shipped to each worker once (e.g. the dataset); items
    should be small.  With one worker everything runs in the calling
    process, which keeps single-worker runs free of any pool overhead.
    ``fn`` must be a module-level function for the process backend.
    """

    def __init__(self, workers: int, context: Any = None, backend: str = "process"):
        if workers < 1:
            raise ValueError("workers must be positive")
        if backend not in ("process", "thread"):
            raise ValueError(f"unknown backend {backend!r}")
        self.workers = workers
        self.context = context
        self.backend = backend
        self._executor = None

    def __enter__(self):
        if self.workers > 1:
            if self.backend == "thread":
                self._executor = ThreadPoolExecutor(self.workers)
            else:
                methods = multiprocessing.get_all_start_methods()
                ctx = multiprocessing.get_context("fork" if "fork" in methods else "spawn")
                self._executor = ProcessPoolExecutor(
                    self.workers, mp_context=ctx,
                    initializer=_install_context, initargs=(self.context,))
        return self

    def __exit__(self, *exc):
        if self._executor is not None:
            self._executor.shutdown(cancel_futures=True)
            self._executor = None

    def map(self, fn: Callable[[Any, Any], Any], items: Sequence) -> list:
        if self._executor is None:
            out = []
            for i, item in enumerate(items):
                try:
                    out.append(fn(self.context, item))
                except Exception as e:
                    raise TaskError(i, e) from e
            return out
        if self.backend == "thread":
            futures = [self._executor.submit(fn, self.context, item) for item in items]
        else:
            futures = [self._executor.submit(_call_with_context, fn, item) for item in items]
        out = []
        for i, fut in enumerate(futures):
            try:
                out.append(fut.result())
            except Exception as e:
                for rest in futures[i + 1:]:
                    rest.cancel()
                raise TaskError(i, e) from e
        return out


def _apply(task, item):
    return task(item)


def parallel_map_ordered(inputs: Sequence, workers: int, task: Callable,
                         backend: str = "thread") -> list:
    """Map a pure ``task`` over ``inputs`` on up to ``workers`` workers.

    Results are positionally aligned with the inputs and identical to
    ``[task(x) for x in inputs]``.  A failing task raises :class:`TaskError`
    carrying its input index.
    """
    workers = max(1, min(workers, len(inputs)))
    with WorkerPool(workers, context=task, backend=backend) as pool:
        return pool.map(_apply, list(inputs))


# --------------------------------------------------------------------------
# timing


@dataclass(frozen=True)
class Timing:
    label: str
    seconds: float
    workers: int = 1


@dataclass(frozen=True)
class TimingSummary:
    label: str
    workers: int
    repetitions: int
    min: float
    median: float
    mean: float


class timed:
    """Context manager recording monotonic wall-clock time.

    >>> with timed("fit", workers=4) as t:
    ...     pass
    >>> t.timing.seconds >= 0
    True
    """

    def __init__(self, label: str = "", workers: int = 1):
        self.label = label
        self.workers = workers
        self.timing: Optional[Timing] = None

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.timing = Timing(self.label, time.perf_counter() - self._start, self.workers)


def benchmark(run: Callable[[], Any], repetitions: int = 3, label: str = "",
              workers: int = 1) -> TimingSummary:
    if repetitions < 1:
        raise ValueError("repetitions must be positive")
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        run()
        times.append(time.perf_counter() - start)
    return TimingSummary(label, workers, repetitions, min(times),
                         statistics.median(times), statistics.fmean(times))
