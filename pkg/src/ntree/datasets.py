"""Synthetic dataset generators, CSV loaders and the metric registry.

Four dataset kinds are supported, each with one CSV layout and a default
metric:

==========================  =====================  ============
kind                        columns                metric
==========================  =====================  ============
``points2d``                ``id,x,y``             euclidean
``trajectories``            ``id,t,x,y``           distanceavg
``wordsets``                ``id,words``           jaccard
``vectors``                 ``id,v0,...,v{d-1}``   l1
==========================  =====================  ============
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .metrics import Point2D, euclidean2d, jaccard, l1norm
from .trajectory import (
    DistanceAvg,
    Hausdorff,
    Trajectory,
    read_trajectories,
    write_trajectories,
)

KINDS = ("points2d", "trajectories", "wordsets", "vectors")
GEN_KINDS = {
    "points2d-clustered": "points2d",
    "trajectories-randomwalk": "trajectories",
    "wordsets": "wordsets",
    "vectors": "vectors",
}


def fmt_real(v: float) -> str:
    """17 significant digits: parses back to the identical double."""
    return format(float(v), ".17g")


@dataclass
class Dataset:
    kind: str
    ids: list[str]
    objects: list = field(repr=False)

    def __len__(self) -> int:
        return len(self.objects)


# --- metric registry --------------------------------------------------------------

@dataclass(frozen=True)
class MetricSpec:
    kind: str
    factory: Callable[..., Any]


METRICS: dict[str, MetricSpec] = {
    "euclidean": MetricSpec("points2d", lambda: euclidean2d),
    "distanceavg": MetricSpec("trajectories", lambda t0=0.0, dur=3600.0: DistanceAvg(t0, dur)),
    "hausdorff": MetricSpec("trajectories", Hausdorff),
    "jaccard": MetricSpec("wordsets", lambda: jaccard),
    "l1": MetricSpec("vectors", lambda: l1norm),
}
DEFAULT_METRIC = {"points2d": "euclidean", "trajectories": "distanceavg",
                  "wordsets": "jaccard", "vectors": "l1"}


class KindMismatchError(ValueError):
    pass


def make_metric(name: str, params: dict | str | None = None):
    if name not in METRICS:
        raise ValueError(f"unknown metric {name!r}; choose from {sorted(METRICS)}")
    if isinstance(params, str):
        params = json.loads(params) if params else {}
    return METRICS[name].factory(**(params or {}))


def metric_params(metric) -> dict:
    if isinstance(metric, DistanceAvg):
        return {"t0": metric.t0, "dur": metric.dur}
    return {}


def check_kind(metric_name: str, kind: str) -> None:
    want = METRICS[metric_name].kind
    if want != kind:
        raise KindMismatchError(f"metric {metric_name!r} needs a {want} dataset, got {kind}")


def prepare(objects: list, metric) -> list:
    """Apply the metric's one-off preprocessing (trajectory adjustment) if any."""
    prep = getattr(metric, "prepare", None)
    return [prep(o) for o in objects] if prep else list(objects)


# --- CSV ---------------------------------------------------------------------------

def sniff_kind(path) -> str:
    with open(path, newline="", encoding="utf-8") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    if header == ["id", "x", "y"]:
        return "points2d"
    if header == ["id", "t", "x", "y"]:
        return "trajectories"
    if header == ["id", "words"]:
        return "wordsets"
    if len(header) > 1 and header[0] == "id" and header[1:] == [f"v{i}" for i in range(len(header) - 1)]:
        return "vectors"
    raise ValueError(f"{path}: unrecognized header {header}")


def load_dataset(path, spatial_only: bool = False) -> Dataset:
    """Read any of the four CSV layouts.

    ``spatial_only`` re-times trajectories to constant speed so that only the
    shape of the path matters.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such dataset: {path}")
    kind = sniff_kind(path)
    if kind == "trajectories":
        ids, objs = read_trajectories(path, spatial_only=spatial_only)
        return Dataset(kind, ids, objs)
    ids, objs = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for rec in reader:
            if not rec:
                continue
            if len(rec) != len(header):
                raise ValueError(f"{path}: row for id {rec[0]!r} has {len(rec)} fields, expected {len(header)}")
            ids.append(rec[0])
            if kind == "points2d":
                objs.append(Point2D(float(rec[1]), float(rec[2])))
            elif kind == "wordsets":
                objs.append(frozenset(rec[1].split()))
            else:
                objs.append(np.array([float(v) for v in rec[1:]]))
    return Dataset(kind, ids, objs)


def write_dataset(path, ds: Dataset) -> None:
    if ds.kind == "trajectories":
        write_trajectories(path, ds.ids, ds.objects)
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if ds.kind == "points2d":
            w.writerow(["id", "x", "y"])
            for i, p in zip(ds.ids, ds.objects):
                w.writerow([i, repr(float(p[0])), repr(float(p[1]))])
        elif ds.kind == "wordsets":
            w.writerow(["id", "words"])
            for i, s in zip(ds.ids, ds.objects):
                w.writerow([i, " ".join(sorted(s))])
        else:
            dim = len(ds.objects[0])
            w.writerow(["id"] + [f"v{j}" for j in range(dim)])
            for i, v in zip(ds.ids, ds.objects):
                w.writerow([i] + [repr(float(x)) for x in v])


# --- payload codecs for the nodes table ------------------------------------------------

class PayloadCodec:
    """Columns that carry an object inside the nodes table."""

    def __init__(self, kind: str, dim: int = 0):
        self.kind = kind
        self.dim = dim

    @property
    def schema(self) -> str:
        return f"vectors:{self.dim}" if self.kind == "vectors" else self.kind

    @classmethod
    def from_schema(cls, schema: str) -> "PayloadCodec":
        kind, _, dim = schema.partition(":")
        if kind not in KINDS:
            raise ValueError(f"unknown payload schema {schema!r}")
        return cls(kind, int(dim) if dim else 0)

    @classmethod
    def for_objects(cls, kind: str, objects) -> "PayloadCodec":
        dim = 0
        if kind == "vectors":
            first = next((o for o in objects if o is not None), None)
            dim = 0 if first is None else len(first)
        return cls(kind, dim)

    def columns(self) -> list[str]:
        if self.kind == "points2d":
            return ["X", "Y"]
        if self.kind == "wordsets":
            return ["Words"]
        if self.kind == "vectors":
            return [f"V{j}" for j in range(self.dim)]
        return ["TrajRef"]

    def encode(self, tid: int, obj) -> list[str]:
        if self.kind == "points2d":
            return [fmt_real(obj[0]), fmt_real(obj[1])]
        if self.kind == "wordsets":
            return [" ".join(sorted(obj))]
        if self.kind == "vectors":
            return [fmt_real(x) for x in obj]
        return [str(tid)]

    def decode(self, cols: list[str], sidecar: dict | None = None):
        if self.kind == "points2d":
            return Point2D(float(cols[0]), float(cols[1]))
        if self.kind == "wordsets":
            return frozenset(cols[0].split())
        if self.kind == "vectors":
            return np.array([float(x) for x in cols])
        ref = int(cols[0])
        if sidecar is None or ref not in sidecar:
            raise ValueError(f"trajectory {ref} missing from sidecar file")
        return sidecar[ref]


def write_unit_table(path, items: list[tuple[int, Trajectory]]) -> None:
    """Exact unit-level trajectory dump (gaps and jumps survive)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["TID", "Start", "End", "X0", "Y0", "X1", "Y1"])
        for tid, U in items:
            for s, e, a, b in zip(U.start, U.end, U.p0, U.p1):
                w.writerow([tid, fmt_real(s), fmt_real(e), fmt_real(a[0]), fmt_real(a[1]),
                            fmt_real(b[0]), fmt_real(b[1])])


def read_unit_table(path) -> dict[int, Trajectory]:
    rows: dict[int, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rec in reader:
            if rec:
                rows.setdefault(int(rec[0]), []).append([float(x) for x in rec[1:]])
    out = {}
    for tid, r in rows.items():
        a = np.array(r)
        out[tid] = Trajectory(a[:, 0], a[:, 1], a[:, 2:4], a[:, 4:6])
    return out


# --- generators --------------------------------------------------------------------------

def gen_points_clustered(n: int, rng: np.random.Generator, clusters: int = 12,
                         extent: float = 1000.0) -> Dataset:
    """Gaussian clusters of varying size and spread in a square."""
    centers = rng.uniform(0, extent, size=(clusters, 2))
    spread = rng.uniform(0.005, 0.04, size=clusters) * extent
    weights = rng.dirichlet(np.full(clusters, 2.0))
    which = rng.choice(clusters, size=n, p=weights)
    xy = centers[which] + rng.normal(size=(n, 2)) * spread[which, None]
    xy = np.round(xy, 3)
    return Dataset("points2d", [str(i) for i in range(n)], [Point2D(float(x), float(y)) for x, y in xy])


def gen_trajectories(n: int, rng: np.random.Generator, length: int = 38, hubs: int = 10,
                     extent: float = 10000.0) -> Dataset:
    """Noisy trips between random hubs, in meters and seconds.

    Each trip has ``length`` samples at irregular intervals; the path wanders
    around the straight line between its end hubs (a Brownian bridge).
    """
    if length < 2:
        raise ValueError("trajectories need at least two samples")
    hub = rng.uniform(0, extent, size=(hubs, 2))
    ids, objs = [], []
    for i in range(n):
        a, b = rng.choice(hubs, size=2, replace=False)
        src = hub[a] + rng.normal(size=2) * 150.0
        dst = hub[b] + rng.normal(size=2) * 150.0
        dt = rng.uniform(20.0, 60.0, size=length - 1)
        t = np.round(rng.uniform(0, 86400.0) + np.concatenate([[0.0], np.cumsum(dt)]), 1)
        f = np.linspace(0.0, 1.0, length)[:, None]
        walk = np.cumsum(rng.normal(size=(length, 2)) * 40.0, axis=0)
        walk -= walk[0]
        bridge = walk - f * walk[-1]
        xy = np.round(src + f * (dst - src) + bridge, 2)
        ids.append(str(i))
        objs.append(Trajectory.from_samples(t, xy))
    return Dataset("trajectories", ids, objs)


def gen_wordsets(n: int, rng: np.random.Generator, vocab: int = 3000, topics: int = 40,
                 mean_size: float = 13.0) -> Dataset:
    """Sentence-like word sets: Zipf-distributed words with topical clustering."""
    words = np.array([f"w{j:04d}" for j in range(vocab)])
    base = 1.0 / np.arange(1, vocab + 1) ** 1.1
    topic_words = [rng.choice(vocab, size=60, replace=False) for _ in range(topics)]
    ids, objs = [], []
    for i in range(n):
        size = max(1, int(rng.poisson(mean_size)))
        p = base.copy()
        p[topic_words[rng.integers(topics)]] += 0.02
        p /= p.sum()
        objs.append(frozenset(words[rng.choice(vocab, size=min(size, vocab), replace=False, p=p)].tolist()))
        ids.append(str(i))
    return Dataset("wordsets", ids, objs)


def gen_vectors(n: int, rng: np.random.Generator, dim: int = 64, prototypes: int = 20) -> Dataset:
    """Integer pixel-intensity vectors scattered around a few prototypes."""
    proto = rng.integers(0, 256, size=(prototypes, dim)).astype(float)
    which = rng.integers(prototypes, size=n)
    noise = rng.normal(size=(n, dim)) * rng.uniform(5, 40, size=(n, 1))
    v = np.clip(np.rint(proto[which] + noise), 0, 255)
    return Dataset("vectors", [str(i) for i in range(n)], [row.copy() for row in v])


def generate(kind: str, n: int, seed: int, **options) -> Dataset:
    if kind not in GEN_KINDS:
        raise ValueError(f"unknown kind {kind!r}; choose from {sorted(GEN_KINDS)}")
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    if kind == "points2d-clustered":
        return gen_points_clustered(n, rng, **options)
    if kind == "trajectories-randomwalk":
        return gen_trajectories(n, rng, **options)
    if kind == "wordsets":
        return gen_wordsets(n, rng, **options)
    return gen_vectors(n, rng, **options)


# --- distance histogram -------------------------------------------------------------------

def sample_pairs(n: int, pairs: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """``pairs`` distinct unordered index pairs, drawn uniformly."""
    total = n * (n - 1) // 2
    if pairs > total:
        raise ValueError(f"{pairs} pairs requested but only {total} exist")
    if pairs * 3 > total:
        flat = np.sort(rng.choice(total, size=pairs, replace=False))
        # row i holds the pairs (i, i+1), ..., (i, n-1)
        rows = np.arange(n - 1)
        first = rows * n - rows * (rows + 1) // 2
        i = np.searchsorted(first, flat, side="right") - 1
        j = flat - first[i] + i + 1
        return [(int(a), int(b)) for a, b in zip(i, j)]
    seen: set[tuple[int, int]] = set()
    out = []
    while len(out) < pairs:
        i, j = (int(x) for x in rng.integers(n, size=2))
        if i == j:
            continue
        key = (min(i, j), max(i, j))
        if key not in seen:
            seen.add(key)
            out.append(key)
    return out


def distance_histogram(objects, metric, pairs: int, seed: int, bins: int = 100):
    """Counts of sampled pairwise distances in ``bins`` equal-width buckets.

    Returns ``(lower_edges, counts)``. A zero observed range gives one bucket.
    """
    rng = np.random.default_rng(seed)
    ds = np.array([metric(objects[i], objects[j]) for i, j in sample_pairs(len(objects), pairs, rng)])
    lo, hi = float(ds.min()), float(ds.max())
    if hi == lo:
        return np.array([lo]), np.array([len(ds)])
    counts, edges = np.histogram(ds, bins=bins, range=(lo, hi))
    return edges[:-1], counts


def count_modes(counts, smooth: int = 5, prominence: float = 0.1) -> int:
    """Peaks of a moving-average-smoothed histogram.

    A peak counts when it rises above the higher of its two bases (the lowest
    point between it and the nearest taller peak, or the edge, on each side)
    by at least ``prominence`` times the tallest bin. The tallest peak always
    counts, so a non-empty histogram has at least one mode.
    """
    c = np.convolve(np.asarray(counts, dtype=float), np.ones(smooth) / smooth, mode="same")
    top = c.max()
    if top <= 0:
        return 0
    n = len(c)
    modes = 0
    i = 0
    while i < n:
        if i > 0 and c[i - 1] >= c[i]:
            i += 1
            continue
        k = i
        while k + 1 < n and c[k + 1] == c[i]:
            k += 1
        if k + 1 == n or c[k + 1] < c[i]:
            if c[i] == top:
                modes += 1
            else:
                j = i
                while j > 0 and c[j - 1] <= c[i]:
                    j -= 1
                lbase = c[j:i + 1].min() if j > 0 else -np.inf
                m = k
                while m + 1 < n and c[m + 1] <= c[i]:
                    m += 1
                rbase = c[k:m + 1].min() if m + 1 < n else -np.inf
                if c[i] - max(lbase, rbase) >= prominence * top:
                    modes += 1
        i = k + 1
    return modes
