"""Work partitioning for the serial, naive and improved parallel strategies.

Workers are threads: the heavy kernels are numpy calls that release the GIL.
All cross-worker results are merged by :func:`reduce` in ascending worker
rank, so a run is reproducible for a fixed worker count.
"""

from __future__ import annotations

import heapq
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np

from .exceptions import DomainError

STRATEGIES = ("serial", "naive", "improved")
BALANCE_POLICIES = ("static", "dynamic")


@dataclass
class ParallelPlan:
    strategy: str = "improved"
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    balance: str = "dynamic"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise DomainError(f"unknown strategy {self.strategy!r}")
        if self.balance not in BALANCE_POLICIES:
            raise DomainError(f"unknown balance policy {self.balance!r}")
        if self.strategy == "serial":
            self.workers = 1
        if self.workers < 1:
            raise DomainError("workers must be >= 1")


def partition_core_batch(psi, L: int) -> List[np.ndarray]:
    """Split the sampled entries into contiguous slices whose sizes differ by <= 1.

    Fewer than `L` slices are returned when ``len(psi) < L``.
    """
    if L < 1:
        raise DomainError("L must be >= 1")
    psi = np.asarray(psi)
    eff = max(1, min(L, psi.shape[0]))
    return np.array_split(psi, eff)


def assign_factor_rows(tensor, n: int, L: int, policy: str = "dynamic") -> np.ndarray:
    """Row -> worker map for 0-based mode `n` of `tensor` (see :func:`balance_rows`)."""
    return balance_rows(tensor.bucket_sizes(n), L, policy)


def balance_rows(sizes, L: int, policy: str = "dynamic") -> np.ndarray:
    """Map every row to a worker.

    `sizes` holds the number of observed entries per row.  ``static`` is
    round-robin by row index; ``dynamic`` is greedy longest-processing-time
    (largest bucket first, to the least loaded worker, ties to lower rank).
    """
    sizes = np.asarray(sizes)
    if L < 1:
        raise DomainError("L must be >= 1")
    if policy == "static":
        return np.arange(sizes.shape[0]) % L
    if policy != "dynamic":
        raise DomainError(f"unknown balance policy {policy!r}")
    owner = np.empty(sizes.shape[0], dtype=np.int64)
    heap = [(0, w) for w in range(L)]
    for row in np.argsort(-sizes, kind="stable"):
        load, w = heapq.heappop(heap)
        owner[row] = w
        heapq.heappush(heap, (load + int(sizes[row]), w))
    return owner


def worker_loads(owner, sizes, L: int) -> np.ndarray:
    return np.bincount(owner, weights=sizes, minlength=L).astype(np.int64)


def imbalance(loads) -> float:
    """``max_load / ideal_load - 1`` (the epsilon of a balance report)."""
    loads = np.asarray(loads, dtype=float)
    ideal = loads.sum() / loads.shape[0]
    return float(loads.max() / ideal - 1.0) if ideal > 0 else 0.0


def reduce(partials: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise sum in ascending worker-rank order."""
    if not partials:
        raise ValueError("nothing to reduce")
    out = np.array(partials[0], dtype=np.float64, copy=True)
    for p in partials[1:]:
        if np.shape(p) != out.shape:
            raise ValueError(f"partial of shape {np.shape(p)} does not match {out.shape}")
        out += p
    return out


class WorkerPool:
    """Fixed-size thread pool; ``map`` returns results ordered by worker rank."""

    def __init__(self, workers: int = 1):
        self.workers = int(workers)
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def map(self, fn: Callable, items: Sequence) -> list:
        if self._pool is None or len(items) <= 1:
            return [fn(rank, item) for rank, item in enumerate(items)]
        futures = [self._pool.submit(fn, rank, item) for rank, item in enumerate(items)]
        return [f.result() for f in futures]

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
