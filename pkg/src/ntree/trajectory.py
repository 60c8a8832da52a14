"""Trajectories as sequences of linear-motion units, and distances on them.

A :class:`Trajectory` stores its units column-wise in numpy arrays
(``start``, ``end``, ``p0``, ``p1``). The exact average distance between two
trajectories is evaluated interval by interval over their common refinement,
where the Euclidean distance of two linear motions is the square root of a
quadratic in time and integrates in closed form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

DEFAULT_REF = (0.0, 3600.0)


class DegenerateSpanError(ValueError):
    pass


class SpanMismatchError(ValueError):
    pass


class Unit(NamedTuple):
    start: float
    end: float
    p0: tuple[float, float]
    p1: tuple[float, float]


@dataclass(frozen=True)
class LinearMotion:
    """Point moving on a straight line from ``p0`` at ``t0`` to ``p1`` at ``t1``."""

    t0: float
    t1: float
    p0: tuple[float, float]
    p1: tuple[float, float]

    def at(self, t: float) -> np.ndarray:
        lam = (t - self.t0) / (self.t1 - self.t0)
        return np.asarray(self.p0) * (1.0 - lam) + np.asarray(self.p1) * lam


class RefinementInterval(NamedTuple):
    start: float
    end: float
    seg_u: LinearMotion
    seg_v: LinearMotion


class Trajectory:
    """Ordered, time-disjoint sequence of units.

    Units may leave temporal gaps between them; spatial continuity is not
    required. Zero-length units are rejected.
    """

    __slots__ = ("start", "end", "p0", "p1", "_gap_free")

    def __init__(self, start, end, p0, p1):
        start = np.asarray(start, dtype=float).reshape(-1)
        end = np.asarray(end, dtype=float).reshape(-1)
        p0 = np.asarray(p0, dtype=float).reshape(-1, 2)
        p1 = np.asarray(p1, dtype=float).reshape(-1, 2)
        n = start.shape[0]
        if n == 0:
            raise ValueError("a trajectory needs at least one unit")
        if not (end.shape[0] == n and p0.shape[0] == n and p1.shape[0] == n):
            raise ValueError("unit columns have different lengths")
        if not (np.all(np.isfinite(start)) and np.all(np.isfinite(end))
                and np.all(np.isfinite(p0)) and np.all(np.isfinite(p1))):
            raise ValueError("non-finite unit values")
        if np.any(start >= end):
            raise ValueError("every unit needs start < end")
        if np.any(end[:-1] > start[1:]):
            raise ValueError("units overlap or are out of time order")
        self.start, self.end, self.p0, self.p1 = start, end, p0, p1
        self._gap_free = None

    @classmethod
    def from_units(cls, units: Iterable[Sequence]) -> "Trajectory":
        units = list(units)
        return cls([u[0] for u in units], [u[1] for u in units],
                   [u[2] for u in units], [u[3] for u in units])

    @classmethod
    def from_samples(cls, t, xy) -> "Trajectory":
        """Connect consecutive ``(t, x, y)`` samples by units."""
        t = np.asarray(t, dtype=float)
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if t.shape[0] < 2:
            raise ValueError("need at least two samples")
        return cls(t[:-1], t[1:], xy[:-1], xy[1:])

    @property
    def units(self) -> list[Unit]:
        return [Unit(float(s), float(e), (float(a[0]), float(a[1])), (float(b[0]), float(b[1])))
                for s, e, a, b in zip(self.start, self.end, self.p0, self.p1)]

    def __len__(self) -> int:
        return self.start.shape[0]

    @property
    def span(self) -> tuple[float, float]:
        return float(self.start[0]), float(self.end[-1])

    @property
    def gap_free(self) -> bool:
        if self._gap_free is None:
            self._gap_free = bool(np.all(self.end[:-1] == self.start[1:]))
        return self._gap_free

    def vertices(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit start points plus the final end point, with their instants.

        Where a temporal gap separates two units, the end of the earlier unit
        is a vertex as well.
        """
        gap = np.flatnonzero(self.end[:-1] < self.start[1:])
        t = np.append(self.start, self.end[-1])
        p = np.vstack([self.p0, self.p1[-1:]])
        if gap.size:
            t = np.insert(t, gap + 1, self.end[gap])
            p = np.insert(p, gap + 1, self.p1[gap], axis=0)
        return t, p

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (len(self) == len(other)
                and np.array_equal(self.start, other.start)
                and np.array_equal(self.end, other.end)
                and np.array_equal(self.p0, other.p0)
                and np.array_equal(self.p1, other.p1))

    __hash__ = None

    def __repr__(self) -> str:
        s, e = self.span
        return f"Trajectory({len(self)} units, [{s:g}, {e:g}])"

    def __getstate__(self):
        return (self.start, self.end, self.p0, self.p1)

    def __setstate__(self, state):
        self.start, self.end, self.p0, self.p1 = state
        self._gap_free = None


def _lerp(p0, p1, lam):
    # exact at lam == 0 and lam == 1
    return p0 * (1.0 - lam) + p1 * lam


# --- adjustment and refinement ---------------------------------------------

def adjust(U: Trajectory, t: float, dur: float) -> Trajectory:
    """Map ``U`` onto ``[t, t + dur]`` by uniform time scaling and close gaps.

    Spatial coordinates are left untouched; each temporal gap is bridged by a
    constant-speed unit from the end of one unit to the start of the next.
    """
    if not dur > 0:
        raise ValueError("duration must be positive")
    if is_adjusted(U, t, dur):
        return U
    span = U.end[-1] - U.start[0]
    if not span > 0:
        raise DegenerateSpanError("trajectory has zero total duration")
    f = dur / span
    start = t + (U.start - U.start[0]) * f
    end = t + (U.end - U.start[0]) * f
    start[0] = t
    end[-1] = t + dur
    return _close_gaps(start, end, U.p0, U.p1)


def is_adjusted(U: Trajectory, t: float, dur: float) -> bool:
    return U.start[0] == t and U.end[-1] == t + dur and U.gap_free


def close_gaps(U: Trajectory) -> Trajectory:
    if U.gap_free:
        return U
    return _close_gaps(U.start, U.end, U.p0, U.p1)


def _close_gaps(start, end, p0, p1) -> Trajectory:
    gap = np.flatnonzero(end[:-1] < start[1:])
    if gap.size:
        at = gap + 1
        start, end, p0, p1 = (
            np.insert(start, at, end[gap]),
            np.insert(end, at, start[at]),
            np.insert(p0, at, p1[gap], axis=0),
            np.insert(p1, at, p0[at], axis=0),
        )
    return Trajectory(start, end, p0, p1)


def _check_common_span(U: Trajectory, V: Trajectory) -> None:
    if U.span != V.span:
        raise SpanMismatchError(f"spans differ: {U.span} vs {V.span}")
    if not (U.gap_free and V.gap_free):
        raise SpanMismatchError("both trajectories must be gap-free")


def refinement_partition(U: Trajectory, V: Trajectory) -> list[RefinementInterval]:
    """Coarsest common subdivision of two adjusted trajectories, in one merge pass."""
    _check_common_span(U, V)
    out = []
    t = U.start[0]
    stop = U.end[-1]
    i = j = 0
    while t < stop:
        nxt = min(U.end[i], V.end[j])
        out.append(RefinementInterval(
            float(t), float(nxt), _restrict(U, i, t, nxt), _restrict(V, j, t, nxt)))
        if U.end[i] == nxt:
            i += 1
        if V.end[j] == nxt:
            j += 1
        t = nxt
    return out


def _restrict(U: Trajectory, i: int, t0: float, t1: float) -> LinearMotion:
    s, e = U.start[i], U.end[i]
    a = _lerp(U.p0[i], U.p1[i], (t0 - s) / (e - s))
    b = _lerp(U.p0[i], U.p1[i], (t1 - s) / (e - s))
    return LinearMotion(float(t0), float(t1), tuple(map(float, a)), tuple(map(float, b)))


# --- closed-form integrals ---------------------------------------------------

def _hyp_integral(lo, hi, length, g_lo, g_hi, h):
    """Integral of sqrt(w^2 + h^2) over [lo, hi] with 0 <= lo <= hi.

    ``length`` is hi - lo supplied separately to avoid cancellation, and
    ``g_lo``/``g_hi`` the integrand at the bounds. Both terms of the
    antiderivative difference are rewritten to stay free of subtraction.
    Degenerate inputs (zero length, h == 0) give exact zeros, not NaN.
    """
    gsum = g_lo + g_hi
    s = hi + lo
    first = 0.5 * length * (0.5 * gsum + 0.5 * s * s / np.where(gsum > 0, gsum, 1.0))
    denom = hi * g_lo + lo * g_hi
    second = 0.5 * h * h * np.arcsinh(length * s / np.where(denom > 0, denom, 1.0))
    return first + second


def mean_motion_distance(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Mean of ``|A + B s|`` for ``s`` in [0, 1], row-wise over ``(n, 2)`` arrays.

    ``A`` is the offset between two linear motions at the interval start and
    ``A + B`` the offset at its end.
    """
    A = np.asarray(A, dtype=float).reshape(-1, 2)
    B = np.asarray(B, dtype=float).reshape(-1, 2)
    ax, ay, bx, by = A[:, 0], A[:, 1], B[:, 0], B[:, 1]
    g_a = np.sqrt(ax * ax + ay * ay)
    bb = bx * bx + by * by
    moving = bb > 0
    if not moving.all():
        out = g_a.copy()
        if moving.any():
            out[moving] = mean_motion_distance(A[moving], B[moving])
        return out
    ex, ey = ax + bx, ay + by
    g_e = np.sqrt(ex * ex + ey * ey)
    nb = np.sqrt(bb)
    # w runs over [w0, w1] with |A + B s| = sqrt(w^2 + h^2)
    w0 = (ax * bx + ay * by) / nb
    w1 = w0 + nb
    h = np.abs(ax * by - ay * bx) / nb
    pos = w0 >= 0
    neg = w1 <= 0
    split = ~(pos | neg)
    zero = np.zeros_like(w0)
    # first piece: the whole range (mirrored when negative) or [0, -w0]
    lo1 = np.where(pos, w0, np.where(neg, -w1, zero))
    hi1 = np.where(pos, w1, -w0)
    len1 = np.where(split, -w0, nb)
    glo1 = np.where(pos, g_a, np.where(neg, g_e, h))
    ghi1 = np.where(pos, g_e, g_a)
    # second piece: [0, w1] when the range straddles zero, else empty
    hi2 = np.where(split, w1, zero)
    ghi2 = np.where(split, g_e, h)
    total = _hyp_integral(np.concatenate([lo1, zero]), np.concatenate([hi1, hi2]),
                          np.concatenate([len1, hi2]), np.concatenate([glo1, h]),
                          np.concatenate([ghi1, ghi2]), np.concatenate([h, h]))
    n = w0.shape[0]
    return (total[:n] + total[n:]) / nb


def unit_avg_distance(a: LinearMotion, b: LinearMotion, iv: tuple[float, float] | None = None) -> float:
    """Average Euclidean distance of two linear motions over ``iv``.

    ``iv`` defaults to the time interval of ``a``.
    """
    t0, t1 = iv if iv is not None else (a.t0, a.t1)
    if not t1 > t0:
        raise ValueError("empty interval")
    A = a.at(t0) - b.at(t0)
    B = (a.at(t1) - b.at(t1)) - A
    return float(mean_motion_distance(A, B)[0])


def sqrt_quadratic_mean(a: float, b: float, c: float, t0: float, t1: float) -> float:
    """Mean of ``sqrt(a t^2 + b t + c)`` over ``[t0, t1]``.

    Negative radicands (rounding residue, or the part of a linear radicand
    below its root) count as zero.
    """
    if not t1 > t0:
        raise ValueError("empty interval")
    if a < 0:
        raise ValueError("a squared distance has a >= 0")
    width = t1 - t0
    if a == 0 and b == 0:
        return math.sqrt(max(c, 0.0))
    if a == 0:
        # power rule on sqrt(b t + c), zero where the radicand is negative
        root = -c / b
        lo, hi = (max(t0, root), t1) if b > 0 else (t0, min(t1, root))
        if hi <= lo:
            return 0.0
        F = lambda t: (2.0 / (3.0 * b)) * max(b * t + c, 0.0) ** 1.5
        return (F(hi) - F(lo)) / width
    sa = math.sqrt(a)
    tc = -b / (2.0 * a)
    h2 = max(c - b * b / (4.0 * a), 0.0)
    h = math.sqrt(h2)
    w0 = sa * (t0 - tc)
    w1 = sa * (t1 - tc)
    length = sa * width
    g = lambda w: math.sqrt(w * w + h2)
    f = lambda lo, hi, L: float(_hyp_integral(np.float64(lo), np.float64(hi), np.float64(L),
                                              np.float64(g(lo)), np.float64(g(hi)), np.float64(h)))
    if w0 >= 0:
        total = f(w0, w1, length)
    elif w1 <= 0:
        total = f(-w1, -w0, length)
    else:
        total = f(0.0, -w0, -w0) + f(0.0, w1, w1)
    return total / sa / width


# --- distances -----------------------------------------------------------------

def _positions(U: Trajectory, idx: np.ndarray, t0: np.ndarray, t1: np.ndarray):
    s = U.start[idx]
    span = U.end[idx] - s
    p0, p1 = U.p0[idx], U.p1[idx]
    return _lerp(p0, p1, ((t0 - s) / span)[:, None]), _lerp(p0, p1, ((t1 - s) / span)[:, None])


def _breaks(U: Trajectory) -> np.ndarray:
    return np.concatenate([U.start, U.end[-1:]])


def _avg_distance_gap_free(U: Trajectory, V: Trajectory) -> float:
    bps = np.unique(np.concatenate([_breaks(U), _breaks(V)]))
    t0, t1 = bps[:-1], bps[1:]
    mid = 0.5 * (t0 + t1)
    u0, u1 = _positions(U, np.searchsorted(U.start, mid, side="right") - 1, t0, t1)
    v0, v1 = _positions(V, np.searchsorted(V.start, mid, side="right") - 1, t0, t1)
    A = u0 - v0
    means = mean_motion_distance(A, (u1 - v1) - A)
    return float(np.dot(means, t1 - t0) / (bps[-1] - bps[0]))


def distance_avg(U: Trajectory, V: Trajectory, ref: tuple[float, float] = DEFAULT_REF) -> float:
    """Average distance after mapping both trajectories onto ``ref = (t0, dur)``."""
    t, dur = ref
    return _avg_distance_gap_free(adjust(U, t, dur), adjust(V, t, dur))


def avg_deviation(U: Trajectory, A: Trajectory) -> float:
    """Average distance between a trajectory and an approximation on the same span."""
    if U.span != A.span:
        raise SpanMismatchError(f"spans differ: {U.span} vs {A.span}")
    return _avg_distance_gap_free(close_gaps(U), close_gaps(A))


class DistanceAvg:
    """DistanceAvg as a picklable metric over a fixed reference interval."""

    name = "distanceavg"

    def __init__(self, t0: float = DEFAULT_REF[0], dur: float = DEFAULT_REF[1]):
        self.t0 = float(t0)
        self.dur = float(dur)

    def __call__(self, U: Trajectory, V: Trajectory) -> float:
        return distance_avg(U, V, (self.t0, self.dur))

    def prepare(self, U: Trajectory) -> Trajectory:
        return adjust(U, self.t0, self.dur)

    def __repr__(self) -> str:
        return f"DistanceAvg(t0={self.t0!r}, dur={self.dur!r})"


def discrete_hausdorff(A, B) -> float:
    """Symmetric Hausdorff distance between two point sequences, O(mn)."""
    A = np.asarray(A, dtype=float).reshape(-1, 2)
    B = np.asarray(B, dtype=float).reshape(-1, 2)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("point sequences must be non-empty")
    diff = A[:, None, :] - B[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


class Hausdorff:
    """Discrete Hausdorff distance on trajectory vertices."""

    name = "hausdorff"

    def __call__(self, U: Trajectory, V: Trajectory) -> float:
        return discrete_hausdorff(U.vertices()[1], V.vertices()[1])


# --- approximations ------------------------------------------------------------

@dataclass(frozen=True)
class CylinderUnit:
    start: float
    end: float
    p0: tuple[float, float]
    p1: tuple[float, float]
    r: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("cylinder unit needs start < end")
        if self.r < 0:
            raise ValueError("negative radius")

    @property
    def axis(self) -> LinearMotion:
        return LinearMotion(self.start, self.end, self.p0, self.p1)


@dataclass(frozen=True)
class CylinderApprox:
    axis: Trajectory
    radius: float
    source_span: tuple[float, float]


def _checkpoints(U: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    t = np.concatenate([U.start, U.end])
    p = np.vstack([U.p0, U.p1])
    order = np.argsort(t, kind="stable")
    return t[order], p[order]


def _deviation(tv, pv, ct, cp, a, b) -> np.ndarray:
    """Distance at checkpoints ``(ct, cp)`` to the segment between vertices a and b."""
    lam = ((ct - tv[a]) / (tv[b] - tv[a]))[:, None]
    return np.sqrt(((_lerp(pv[a], pv[b], lam) - cp) ** 2).sum(axis=1))


def douglas_peucker(U: Trajectory, r: float) -> Trajectory:
    """Time-synchronized Douglas-Peucker simplification with tolerance ``r``.

    Keeps a subsequence of the vertices (first and last always) such that at
    every unit endpoint of ``U`` the simplified trajectory, evaluated at the
    same instant, lies within ``r``.
    """
    tv, pv = U.vertices()
    ct, cp = _checkpoints(U)
    n = tv.shape[0] - 1
    keep = np.zeros(n + 1, dtype=bool)
    keep[0] = keep[n] = True
    stack = [(0, n)]
    while stack:
        a, b = stack.pop()
        if b - a < 2:
            continue
        lo = np.searchsorted(ct, tv[a], side="left")
        hi = np.searchsorted(ct, tv[b], side="right")
        dev = _deviation(tv, pv, ct[lo:hi], cp[lo:hi], a, b)
        if dev.size == 0 or dev.max() <= r:
            continue
        # split at the interior vertex nearest in time to the worst checkpoint
        worst_t = ct[lo + int(np.argmax(dev))]
        m = int(np.searchsorted(tv, worst_t, side="left"))
        m = min(max(m, a + 1), b - 1)
        keep[m] = True
        stack.append((a, m))
        stack.append((m, b))
    idx = np.flatnonzero(keep)
    return Trajectory.from_samples(tv[idx], pv[idx])


def cylinder_approx(U: Trajectory, r: float) -> CylinderApprox:
    """Douglas-Peucker axis whose average deviation from ``U`` stays below r/2."""
    if not r > 0:
        raise ValueError("approximation radius must be positive")
    axis = douglas_peucker(U, r)
    if avg_deviation(U, axis) >= r / 2:
        axis = douglas_peucker(U, r / 2)
        if avg_deviation(U, axis) >= r / 2:
            axis = Trajectory.from_samples(*U.vertices())
    return CylinderApprox(axis, float(r), U.span)


def bounding_cylinder(U: Trajectory) -> CylinderUnit:
    """Single oblique cylinder from the first to the last point of ``U``."""
    t0, t1 = U.span
    tv = np.array([t0, t1])
    pv = np.vstack([U.p0[:1], U.p1[-1:]])
    ct, cp = _checkpoints(U)
    r = float(_deviation(tv, pv, ct, cp, 0, 1).max())
    return CylinderUnit(t0, t1, tuple(map(float, pv[0])), tuple(map(float, pv[1])), r)


def cylinder_distances(v: CylinderUnit, w: CylinderUnit) -> tuple[float, float, float]:
    """Axis distance with lower and upper bounds ``(d, d - rv - rw, d + rv + rw)``."""
    if (v.start, v.end) != (w.start, w.end):
        raise SpanMismatchError("cylinder units must share one time interval")
    d = unit_avg_distance(v.axis, w.axis)
    return d, d - v.r - w.r, d + v.r + w.r


# --- CSV -------------------------------------------------------------------------

def retime_constant_speed(xy, duration: float = 1.0) -> Trajectory:
    """Trajectory through ``xy`` at constant speed, for purely spatial comparison."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    keep = np.ones(xy.shape[0], dtype=bool)
    keep[1:] = np.any(xy[1:] != xy[:-1], axis=1)
    xy = xy[keep]
    if xy.shape[0] == 1:
        xy = np.vstack([xy, xy])
        return Trajectory.from_samples([0.0, duration], xy)
    seg = np.sqrt(((xy[1:] - xy[:-1]) ** 2).sum(axis=1))
    t = np.concatenate([[0.0], np.cumsum(seg)])
    return Trajectory.from_samples(t * (duration / t[-1]), xy)


def read_trajectories(path, spatial_only: bool = False) -> tuple[list[str], list[Trajectory]]:
    """Read an ``id,t,x,y`` file; consecutive samples of one id become units."""
    ids: list[str] = []
    rows: dict[str, list[tuple[float, float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["id", "t", "x", "y"]:
            raise ValueError(f"{path}: expected header id,t,x,y, got {header}")
        last = None
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            oid = rec[0]
            if oid != last:
                if oid in rows:
                    raise ValueError(f"{path}:{lineno}: rows of id {oid!r} are not grouped")
                rows[oid] = []
                ids.append(oid)
                last = oid
            t, x, y = float(rec[1]), float(rec[2]), float(rec[3])
            if rows[oid] and not t > rows[oid][-1][0]:
                raise ValueError(f"{path}:{lineno}: t not strictly increasing for id {oid!r}")
            rows[oid].append((t, x, y))
    trajs = []
    for oid in ids:
        arr = np.array(rows[oid], dtype=float)
        if spatial_only:
            trajs.append(retime_constant_speed(arr[:, 1:]))
        else:
            if arr.shape[0] < 2:
                raise ValueError(f"{path}: id {oid!r} has fewer than two samples")
            trajs.append(Trajectory.from_samples(arr[:, 0], arr[:, 1:]))
    return ids, trajs


def write_trajectories(path, ids: Sequence[str], trajs: Sequence[Trajectory], fmt=repr) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "t", "x", "y"])
        for oid, U in zip(ids, trajs):
            t, p = U.vertices()
            for ti, (x, y) in zip(t, p):
                w.writerow([oid, fmt(float(ti)), fmt(float(x)), fmt(float(y))])
