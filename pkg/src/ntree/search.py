"""Exact range and kNN search over an :class:`~ntree.tree.NTree`.

Range search starts "inside": at each node it routes to the closest entry and
uses stored entry distances and subtree radii to report, prune or schedule
the siblings. Scheduled siblings are searched "outside", visiting entries in
stored order and pruning the remaining ones after each evaluation.

kNN first estimates a radius that is guaranteed to enclose ``k`` objects by a
best-first walk over distance estimates, then runs one range search.

All functions return results as ``{oid: distance}`` where the distance is
``None`` for objects reported without an evaluation.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .tree import Node, NTree, closest_center, subtree_objects


@dataclass
class QueryStats:
    distance_evaluations: int = 0
    nodes_visited: int = 0
    result_size: int = 0
    elapsed_us: float = 0.0


class _Query:
    """Per-query scratch state: the query object, counters, known distances."""

    __slots__ = ("q", "metric", "evals", "nodes", "known")

    def __init__(self, tree: NTree, q):
        self.q = q
        self.metric = tree.metric
        self.evals = 0
        self.nodes = 0
        self.known: dict[int, float] = {}

    def dist(self, obj) -> float:
        self.evals += 1
        return self.metric(self.q, obj)

    def dist_entry(self, node: Node, j: int, dq: dict[int, float]) -> float:
        u = dq.get(j)
        if u is None:
            u = dq[j] = self.dist(node.objs[j])
        self.known[node.oids[j]] = u
        return u


def _report_all(node: Node, res: dict) -> None:
    for oid, _ in subtree_objects(node):
        res.setdefault(oid, None)


# --- inside ---------------------------------------------------------------------

def range_search1(node: Node, qx: _Query, r: float):
    """Route to the closest entry and classify the others.

    Returns
    -------
    (int, dict, list of int)
        Closest entry position, objects found here, and positions of sibling
        subtrees that must be searched from outside.
    """
    dq: dict[int, float] = {}
    i, dmin = closest_center(node, qx.dist, dq)
    for j, u in dq.items():
        qx.known[node.oids[j]] = u
    Di = node.D[i].tolist()
    res: dict[int, float | None] = {}
    search: list[int] = []
    if node.is_leaf:
        for j, dij in enumerate(Di):
            if dij + dmin <= r:
                res[node.oids[j]] = dq.get(j)
            elif dij - dmin <= r:
                u = qx.dist_entry(node, j, dq)
                if u <= r:
                    res[node.oids[j]] = u
        return i, res, search
    radii = node.radii.tolist()
    for j, dij in enumerate(Di):
        if j == i:
            continue
        rj = radii[j]
        if dij + dmin + rj <= r:
            _report_all(node.children[j], res)
        elif dij - dmin - rj <= r and dij <= 2 * dmin + 2 * r:
            if dij <= 2 * r or qx.dist_entry(node, j, dq) <= dmin + 2 * r:
                search.append(j)
    return i, res, search


# --- outside ----------------------------------------------------------------------

def prune(C: list[int], i: int, u: float, r: float, node: Node, res: dict) -> None:
    """Drop or report remaining entries of ``C`` given ``u = d(q, entry i)``.

    ``C`` is modified in place.
    """
    Di = node.D[i]
    keep = []
    if node.is_leaf:
        for j in C:
            dij = Di[j]
            if r > u + dij:
                res.setdefault(node.oids[j], None)
            elif not r < abs(u - dij):
                keep.append(j)
    else:
        radii = node.radii
        for j in C:
            dij, rj = Di[j], radii[j]
            if r > u + dij + rj:
                _report_all(node.children[j], res)
            elif not r < abs(u - dij) - rj:
                keep.append(j)
    C[:] = keep


def range_search2(node: Node, qx: _Query, r: float, res: dict) -> None:
    qx.nodes += 1
    C = list(range(len(node)))
    dmin = math.inf
    deferred = []
    while C:
        i = C.pop(0)
        u = qx.dist(node.objs[i])
        qx.known[node.oids[i]] = u
        if u < dmin:
            dmin = u
        prune(C, i, u, r, node, res)
        if node.is_leaf:
            if r >= u:
                res[node.oids[i]] = u
        else:
            ri = node.radii[i]
            if r > u + ri:
                _report_all(node.children[i], res)
            elif r >= u - ri:
                deferred.append((i, u))
    for i, u in deferred:
        if u <= dmin + 2 * r:
            range_search2(node.children[i], qx, r, res)


def _range_search(node: Node, qx: _Query, r: float, res: dict) -> None:
    while True:
        qx.nodes += 1
        i, found, search = range_search1(node, qx, r)
        for oid, d in found.items():
            if res.get(oid) is None:
                res[oid] = d
        if node.is_leaf:
            return
        for j in search:
            range_search2(node.children[j], qx, r, res)
        node = node.children[i]


def range_search(tree: NTree, q, r: float, stats: QueryStats | None = None) -> dict[int, float | None]:
    """All live objects within distance ``r`` of ``q``."""
    if r < 0:
        raise ValueError("radius must be non-negative")
    t0 = time.perf_counter()
    qx = _Query(tree, q)
    res: dict[int, float | None] = {}
    if tree.root is not None:
        _range_search(tree.root, qx, r, res)
    _fill(stats, qx, len(res), t0)
    return res


def _fill(stats, qx, size, t0):
    if stats is not None:
        stats.distance_evaluations = qx.evals
        stats.nodes_visited = qx.nodes
        stats.result_size = size
        stats.elapsed_us = (time.perf_counter() - t0) * 1e6


# --- kNN -------------------------------------------------------------------------------

DISTANCE_ESTIMATES: dict[str, Callable[[float, float, float], float]] = {
    "DE0": lambda dx, dij, rj: abs(dx - dij) - rj,
    "DE1": lambda dx, dij, rj: abs(dx - dij),
    "DE2": lambda dx, dij, rj: abs(dx - dij) + rj,
    "DE3": lambda dx, dij, rj: max(dx, dij) - rj,
    "DE4": lambda dx, dij, rj: max(dx, dij),
    "DE5": lambda dx, dij, rj: max(dx, dij) + rj,
    "DE6": lambda dx, dij, rj: dx + dij - rj,
    "DE7": lambda dx, dij, rj: dx + dij,
    "DE8": lambda dx, dij, rj: dx + dij + rj,
}


def distance_estimate(dx: float, dij: float, rj: float, de: str = "DE3") -> float:
    """Priority key for a sibling subtree; only affects search order."""
    try:
        f = DISTANCE_ESTIMATES[de]
    except KeyError:
        raise ValueError(f"unknown distance estimate {de!r}") from None
    return f(dx, dij, rj)


def choose_center(node: Node, qx: _Query, inside: bool, rng: np.random.Generator):
    """Closest entry when the query lies inside the node's partitioning, else a random one."""
    if inside:
        dq: dict[int, float] = {}
        i, dx = closest_center(node, qx.dist, dq)
        for j, u in dq.items():
            qx.known[node.oids[j]] = u
        return i, dx
    i = int(rng.integers(len(node)))
    dx = qx.dist(node.objs[i])
    qx.known[node.oids[i]] = dx
    return i, dx


def _approx_radius(tree: NTree, qx: _Query, k: int, de: str, rng) -> float:
    estimate = DISTANCE_ESTIMATES[de]
    live = tree.live
    tie = itertools.count()
    pq: list = [(0.0, next(tie), False, tree.root, True)]
    seen: set[int] = set()
    r_approx = -1.0
    while pq:
        key, _, is_obj, item, inside = heapq.heappop(pq)
        if is_obj:
            # centers repeat in their own subtree and may be deleted routing
            # objects; count each live object once
            if item in seen or item not in live:
                continue
            seen.add(item)
            r_approx = max(r_approx, key)
            if len(seen) == k:
                return r_approx
            continue
        node = item
        qx.nodes += 1
        i, dx = choose_center(node, qx, inside, rng)
        heapq.heappush(pq, (dx, next(tie), True, node.oids[i], inside))
        Di = node.D[i].tolist()
        if node.is_leaf:
            for j, dij in enumerate(Di):
                if j != i:
                    heapq.heappush(pq, (dx + dij, next(tie), True, node.oids[j], False))
        else:
            radii = node.radii.tolist()
            heapq.heappush(pq, (dx - radii[i], next(tie), False, node.children[i], inside))
            for j, dij in enumerate(Di):
                if j != i:
                    heapq.heappush(pq, (dx + dij, next(tie), True, node.oids[j], False))
                    heapq.heappush(pq, (estimate(dx, dij, radii[j]), next(tie), False,
                                        node.children[j], False))
    raise ValueError(f"tree holds fewer than {k} objects")


def get_approx_radius(tree: NTree, q, k: int, de: str = "DE3", seed: int = 0) -> float:
    """Radius guaranteed to enclose at least ``k`` live objects around ``q``."""
    _check_knn(tree, k, de)
    return _approx_radius(tree, _Query(tree, q), k, de, np.random.default_rng(seed))


def _check_knn(tree, k, de):
    if k < 1:
        raise ValueError("k must be at least 1")
    if de not in DISTANCE_ESTIMATES:
        raise ValueError(f"unknown distance estimate {de!r}")
    if k > tree.size:
        raise ValueError(f"tree holds fewer than {k} objects")


def knn(tree: NTree, q, k: int, de: str = "DE3", seed: int = 0,
        stats: QueryStats | None = None) -> list[tuple[int, float]]:
    """The ``k`` nearest live objects as ``(oid, distance)``, closest first."""
    _check_knn(tree, k, de)
    t0 = time.perf_counter()
    qx = _Query(tree, q)
    r = _approx_radius(tree, qx, k, de, np.random.default_rng(seed))
    res: dict[int, float | None] = {}
    _range_search(tree.root, qx, r, res)
    out = []
    for oid, d in res.items():
        if d is None:
            d = qx.known.get(oid)
            if d is None:
                d = qx.dist(tree.objects[oid])
        out.append((oid, d))
    if len(out) < k:
        raise RuntimeError("approximate radius enclosed fewer than k objects")
    out.sort(key=lambda t: t[1])
    _fill(stats, qx, k, t0)
    return out[:k]


# --- linear scans --------------------------------------------------------------------------

def brute_force_range(S: Sequence, q, r: float, metric, ids: Iterable[int] | None = None) -> dict[int, float]:
    ids = range(len(S)) if ids is None else ids
    out = {}
    for i in ids:
        d = metric(q, S[i])
        if d <= r:
            out[i] = d
    return out


def brute_force_knn(S: Sequence, q, k: int, metric, ids: Iterable[int] | None = None) -> list[tuple[int, float]]:
    ids = range(len(S)) if ids is None else ids
    scored = [(i, metric(q, S[i])) for i in ids]
    scored.sort(key=lambda t: t[1])
    return scored[:k]
