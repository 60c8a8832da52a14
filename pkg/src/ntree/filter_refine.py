"""Filter-and-refine range queries over trajectories.

Each trajectory is stored with two approximations built after mapping it
onto the reference interval: a bounding cylinder (one unit plus radius) and a
Douglas-Peucker axis whose average deviation stays below half the
approximation radius ``r``. Axis distances then differ from exact distances
by less than ``r``, which lets most candidates be accepted or rejected
without the exact computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Hashable, Sequence

from .metrics import CountingMetric
from .search import range_search
from .trajectory import (
    DEFAULT_REF,
    CylinderApprox,
    CylinderUnit,
    DistanceAvg,
    SpanMismatchError,
    Trajectory,
    adjust,
    bounding_cylinder,
    cylinder_approx,
    cylinder_distances,
)
from .tree import NTree, NTreeParams


@dataclass(frozen=True)
class ApproxRecord:
    id: Hashable
    traj: Trajectory
    c: CylinderApprox
    cbb: CylinderUnit


@dataclass
class FRStats:
    filter_candidates: int = 0
    axis_evaluations: int = 0
    exact_evaluations: int = 0
    direct_accepts: int = 0


def make_record(id: Hashable, U: Trajectory, r: float, ref=DEFAULT_REF) -> ApproxRecord:
    A = adjust(U, *ref)
    return ApproxRecord(id, A, cylinder_approx(A, r), bounding_cylinder(A))


def make_records(ids: Sequence, trajs: Sequence[Trajectory], r: float, ref=DEFAULT_REF) -> list[ApproxRecord]:
    return [make_record(i, U, r, ref) for i, U in zip(ids, trajs)]


def _metric_for(s: ApproxRecord) -> DistanceAvg:
    t0, t1 = s.traj.span
    return DistanceAvg(t0, t1 - t0)


def range_scan_fr(T: Sequence[ApproxRecord], s: ApproxRecord, q: float, r: float,
                  stats: FRStats | None = None) -> list[Hashable]:
    """Filter-and-refine range scan without an index."""
    stats = stats if stats is not None else FRStats()
    d = _metric_for(s)
    out = []
    for t in T:
        if (t.cbb.start, t.cbb.end) != (s.cbb.start, s.cbb.end):
            raise SpanMismatchError(f"record {t.id!r} uses another reference interval")
        _, lower, _ = cylinder_distances(s.cbb, t.cbb)
        if lower > q:
            continue
        stats.filter_candidates += 1
        stats.axis_evaluations += 1
        dc = d(s.c.axis, t.c.axis)
        if dc + r <= q:
            stats.direct_accepts += 1
            out.append(t.id)
        elif dc - r > q:
            continue
        else:
            stats.exact_evaluations += 1
            if d(s.traj, t.traj) <= q:
                out.append(t.id)
    return out


def build_axis_index(T: Sequence[ApproxRecord], params: NTreeParams | None = None) -> NTree:
    """N-tree over the axis trajectories; object ids follow the order of ``T``."""
    if not T:
        raise ValueError("no records to index")
    return NTree.build([t.c.axis for t in T], CountingMetric(_metric_for(T[0])), params)


def range_search_fr(T: Sequence[ApproxRecord], index: NTree, s: ApproxRecord, q: float, r: float,
                    stats: FRStats | None = None) -> list[Hashable]:
    """Filter-and-refine range query through an axis index.

    The index is queried with radius ``q + r``; candidates whose axis distance
    is at most ``q - r`` are accepted directly, the rest are decided on the
    exact trajectories.
    """
    stats = stats if stats is not None else FRStats()
    d = _metric_for(s)
    before = index.metric.evaluations
    cand = range_search(index, s.c.axis, q + r)
    stats.filter_candidates += len(cand)
    out = []
    for oid, dc in sorted(cand.items()):
        if dc is None:
            dc = index.metric(s.c.axis, index.objects[oid])
        if dc <= q - r:
            stats.direct_accepts += 1
            out.append(T[oid].id)
            continue
        stats.exact_evaluations += 1
        if d(s.traj, T[oid].traj) <= q:
            out.append(T[oid].id)
    stats.axis_evaluations += index.metric.evaluations - before
    return out


def exact_range(T: Sequence[ApproxRecord], s: ApproxRecord, q: float) -> list[Any]:
    d = _metric_for(s)
    return [t.id for t in T if d(s.traj, t.traj) <= q]
