"""Worker-count resolution, ordered parallel map and seeded RNG streams.

Every stochastic task gets its own PCG64 stream spawned from one
SeedSequence, keyed by task index, so results do not depend on how many
workers run them or in which order they finish.
"""

from __future__ import annotations

import logging
import os
from typing import Callable, Iterable, Mapping, TypeVar

import numpy as np
from joblib import Parallel, delayed

logger = logging.getLogger(__name__)

THREADS_ENV = "ZEROLN_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(env: Mapping[str, str] | None = None) -> int:
    """Worker cap from ``ZEROLN_THREADS``; the CPU count when unset or invalid."""
    env = os.environ if env is None else env
    raw = env.get(THREADS_ENV, "").strip()
    if raw:
        try:
            value = int(raw)
        except ValueError:
            logger.warning("Ignoring non-integer %s=%r", THREADS_ENV, raw)
        else:
            if value >= 1:
                return value
            logger.warning("Ignoring %s=%d (must be >= 1)", THREADS_ENV, value)
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Iterable[T], n_jobs: int | None = None) -> list[R]:
    """``[fn(x) for x in items]``, possibly across workers, in input order."""
    jobs = resolve_threads() if n_jobs is None else max(1, n_jobs)
    work = list(items)
    if jobs == 1 or len(work) <= 1:
        return [fn(x) for x in work]
    results: list[R] = Parallel(n_jobs=min(jobs, len(work)))(delayed(fn)(x) for x in work)
    return results


def spawn_generators(seed: int, count: int) -> list[np.random.Generator]:
    """``count`` independent generators; stream i depends only on (seed, i)."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]


def child_seed(seed: int, index: int) -> int:
    """A 63-bit integer seed for task ``index`` derived from ``seed``."""
    state = np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
