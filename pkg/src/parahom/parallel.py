"""Deterministic fan-out / fan-in helpers."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

WORKERS_ENV = "PARAHOM_WORKERS"


def worker_count(workers=None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def ordered_map(fn, items, workers=None):
    """``map`` whose output order never depends on the number of threads."""
    items = list(items)
    n = worker_count(workers)
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def chunks(N: int, size: int):
    return [(i, min(i + size, N)) for i in range(0, N, size)]


class RunningStats:
    """Mean and sum of squared deviations merged chunk by chunk (Chan et al.)."""

    def __init__(self):
        self.n = 0
        self.mean = None
        self.m2 = None

    def add_batch(self, x: np.ndarray):
        x = np.asarray(x)
        nb = x.shape[0]
        mb = x[0] + (x - x[0]).mean(axis=0)   # shifted: identical samples give an exact mean
        m2b = ((x - mb) ** 2).sum(axis=0) if nb > 1 else np.zeros_like(mb, dtype=float)
        self.merge(nb, mb, m2b)

    def merge(self, nb, mb, m2b):
        if self.n == 0:
            self.n, self.mean, self.m2 = nb, np.array(mb), np.array(m2b)
            return
        n = self.n + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * (nb / n)
        self.m2 = self.m2 + m2b + np.abs(delta) ** 2 * (self.n * nb / n)
        self.n = n

    @property
    def variance(self):
        if self.n < 2:
            return np.zeros_like(self.m2)
        return self.m2 / (self.n - 1)

    @property
    def stderr(self):
        return np.sqrt(self.variance / max(self.n, 1))
