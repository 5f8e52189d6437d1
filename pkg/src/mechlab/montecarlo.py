"""Seeded Monte-Carlo plumbing: estimates with standard errors and worker streams.

Each worker ``w`` draws from ``SeedSequence([seed, tag], spawn_key=(w,))`` and
results are merged in worker order, so output is a pure function of
``(seed, tag, workers)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, NamedTuple, TypeVar

import numpy as np

T = TypeVar("T")

WORKERS_ENV = "MECHLAB_WORKERS"


class Estimate(NamedTuple):
    mean: float
    stderr: float
    samples: int

    def within(self, target: float, sigmas: float = 3.0) -> bool:
        return abs(self.mean - target) <= sigmas * self.stderr

    def __str__(self) -> str:
        return f"{self.mean:.6f} ± {self.stderr:.6f}"


def estimate(x: np.ndarray) -> Estimate:
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 0:
        raise ValueError("no samples")
    stderr = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return Estimate(float(np.mean(x)), stderr, n)


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def _chunks(samples: int, workers: int) -> list[int]:
    base, extra = divmod(samples, workers)
    return [base + (1 if w < extra else 0) for w in range(workers)]


def seed_sequences(seed: int, tag: int, workers: int) -> list[np.random.SeedSequence]:
    return [np.random.SeedSequence([int(seed), int(tag)], spawn_key=(w,)) for w in range(workers)]


def run_chunks(func: Callable[[int, np.random.SeedSequence], T], samples: int, seed: int,
               tag: int = 0, workers: int | None = None) -> list[T]:
    """Call ``func(size, seedseq)`` once per worker and return results in worker order.

    ``func`` must be picklable when more than one worker is used.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    workers = min(worker_count(workers), samples)
    sizes = _chunks(samples, workers)
    seqs = seed_sequences(seed, tag, workers)
    if workers == 1:
        return [func(sizes[0], seqs[0])]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, sizes, seqs))
