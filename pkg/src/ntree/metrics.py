"""Metric functions and evaluation counting.

Every index in this package talks to its data only through a two-argument
distance callable. The standard metrics for the non-trajectory datasets live
here; the trajectory metrics live in :mod:`ntree.trajectory`.
"""

from __future__ import annotations

import math
import threading
from typing import Any, Callable, NamedTuple

import numpy as np

Metric = Callable[[Any, Any], float]


class Point2D(NamedTuple):
    x: float
    y: float


def euclidean2d(a, b) -> float:
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    return math.sqrt(dx * dx + dy * dy)


def jaccard(a: frozenset, b: frozenset) -> float:
    """Jaccard distance ``1 - |a & b| / |a | b|``; two empty sets are at 0."""
    union = len(a | b)
    if union == 0:
        return 0.0
    return 1.0 - len(a & b) / union


def l1norm(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise DimensionError(f"vector lengths differ: {a.shape[0]} != {b.shape[0]}")
    return float(np.abs(a - b).sum())


class DimensionError(ValueError):
    pass


class CountingMetric:
    """Wrap a metric and count how often it is evaluated.

    The counter is guarded by a lock so that concurrent queries may share one
    instance. Use :meth:`reset` or read :attr:`evaluations` before and after an
    operation to attribute evaluations to it.
    """

    def __init__(self, inner: Metric, name: str | None = None):
        self.inner = inner
        self.name = name or getattr(inner, "name", getattr(inner, "__name__", "metric"))
        self._count = 0
        self._lock = threading.Lock()

    def __call__(self, a, b) -> float:
        with self._lock:
            self._count += 1
        return self.inner(a, b)

    @property
    def evaluations(self) -> int:
        return self._count

    def add(self, n: int) -> None:
        """Credit evaluations performed elsewhere (e.g. in worker processes)."""
        if n < 0:
            raise ValueError("evaluation counts never decrease")
        with self._lock:
            self._count += n

    def reset(self) -> int:
        with self._lock:
            n, self._count = self._count, 0
        return n

    def __getstate__(self):
        return {"inner": self.inner, "name": self.name, "_count": self._count}

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()


def unwrap(metric: Metric) -> Metric:
    while isinstance(metric, CountingMetric):
        metric = metric.inner
    return metric
