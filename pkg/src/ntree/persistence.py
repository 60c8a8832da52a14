"""Relational images of N-trees and parallel construction.

A tree is flattened into four tables. ``Nodes`` holds one row per node entry
(object reference, child node id, subtree radius), ``Distances`` the upper
triangle of every node's entry distance matrix, ``Pivots`` every entry's
distances to the two pivots, and ``TreeInfo`` the parameters needed to
rebuild the tree. Node ids are assigned in depth-first preorder so that a
single sequential pass can rebuild the tree without any distance evaluation.

:func:`parallel_build` partitions the top two levels in the calling process
and builds the subtrees below them in a process pool. Each subtree comes back
as relational rows and is imported, so the result equals a sequential build
with the same seed.
"""

from __future__ import annotations

import csv
import json
import os
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .datasets import (
    METRICS,
    PayloadCodec,
    fmt_real,
    make_metric,
    metric_params,
    read_unit_table,
    write_unit_table,
)
from .metrics import CountingMetric, Metric, euclidean2d, jaccard, l1norm, unwrap
from .trajectory import DistanceAvg, Hausdorff, Trajectory
from .tree import InnerNode, LeafNode, Node, NTree, NTreeParams, build_node

NODES_FILE = "nodes.csv"
DISTANCES_FILE = "distances.csv"
PIVOTS_FILE = "pivots.csv"
INFO_FILE = "treeinfo.csv"
TRAJ_FILE = "trajectories.csv"


class ImageError(ValueError):
    """A relational image that does not describe a valid tree."""


@dataclass(frozen=True)
class NodesRow:
    tid: int
    node_id: int
    entry: int
    subtree: int
    max_dist: float


@dataclass(frozen=True)
class DistancesRow:
    node_id: int
    entry1: int
    entry2: int
    distance: float


@dataclass(frozen=True)
class PivotsRow:
    node_id: int
    entry: int
    pos: tuple[float, float]
    is_pivot: bool


@dataclass(frozen=True)
class TreeInfoRow:
    k: int
    l: int
    metric_name: str
    metric_params: str
    payload_schema: str
    root_node_id: int
    center_strategy: str = "greedy"
    seed: int = 0


@dataclass
class RelationalTreeImage:
    info: TreeInfoRow | None
    nodes: list[NodesRow] = field(default_factory=list)
    distances: list[DistancesRow] = field(default_factory=list)
    pivots: list[PivotsRow] = field(default_factory=list)
    objects: dict[int, Any] = field(default_factory=dict)
    labels: dict[int, str] = field(default_factory=dict)


# --- naming helpers --------------------------------------------------------------

def metric_name_of(metric: Metric) -> str:
    m = unwrap(metric)
    if isinstance(m, DistanceAvg):
        return "distanceavg"
    if isinstance(m, Hausdorff):
        return "hausdorff"
    for name, f in (("euclidean", euclidean2d), ("jaccard", jaccard), ("l1", l1norm)):
        if m is f:
            return name
    return getattr(m, "name", "custom")


def kind_of(obj) -> str:
    if isinstance(obj, Trajectory):
        return "trajectories"
    if isinstance(obj, (frozenset, set)):
        return "wordsets"
    if isinstance(obj, np.ndarray):
        return "vectors"
    return "points2d"


# --- export ----------------------------------------------------------------------

def _node_rows(root: Node, start: int):
    """Rows for the subtree at ``root`` with preorder ids from ``start``."""
    nodes, dists, pivs = [], [], []
    sizes = _subtree_sizes(root)
    stack = [(root, start)]
    while stack:
        node, nid = stack.pop()
        m = len(node)
        child_ids = []
        if not node.is_leaf:
            # preorder: child i follows the whole subtree of child i - 1
            cid = nid + 1
            for c in node.children:
                child_ids.append(cid)
                cid += sizes[id(c)]
            for c, i in zip(reversed(node.children), reversed(child_ids)):
                stack.append((c, i))
        for e in range(m):
            if node.is_leaf:
                nodes.append(NodesRow(node.oids[e], nid, e, 0, 0.0))
            else:
                nodes.append(NodesRow(node.oids[e], nid, e, child_ids[e], float(node.radii[e])))
        D = node.D
        for a in range(m):
            for b in range(a + 1, m):
                dists.append(DistancesRow(nid, a, b, float(D[a, b])))
        if m >= 2:
            for e in range(m):
                pivs.append(PivotsRow(nid, e, (float(node.PD[e, 0]), float(node.PD[e, 1])), e in node.pivots))
    nodes.sort(key=lambda r: (r.node_id, r.entry))
    dists.sort(key=lambda r: (r.node_id, r.entry1, r.entry2))
    pivs.sort(key=lambda r: (r.node_id, r.entry))
    return nodes, dists, pivs


def _subtree_sizes(root: Node) -> dict[int, int]:
    """Node count of every subtree, keyed by ``id(node)``."""
    sizes: dict[int, int] = {}
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if node.is_leaf:
            sizes[id(node)] = 1
        elif done:
            sizes[id(node)] = 1 + sum(sizes[id(c)] for c in node.children)
        else:
            stack.append((node, True))
            stack.extend((c, False) for c in node.children)
    return sizes


def export_tree(tree: NTree, start_node_id: int = 0, labels: Sequence[str] | None = None,
                metric_name: str | None = None) -> RelationalTreeImage:
    """Flatten ``tree`` in one depth-first pass; no distances are evaluated."""
    if start_node_id < 0:
        raise ValueError("node ids start at a non-negative number")
    if tree.root is None:
        raise ValueError("cannot export an empty tree")
    nodes, dists, pivs = _node_rows(tree.root, start_node_id)
    tids = sorted({r.tid for r in nodes})
    objects = {t: tree.objects[t] for t in tids}
    kind = kind_of(objects[tids[0]])
    codec = PayloadCodec.for_objects(kind, objects.values())
    metric = unwrap(tree.metric)
    info = TreeInfoRow(
        k=tree.params.k, l=tree.params.l,
        metric_name=metric_name or metric_name_of(metric),
        metric_params=json.dumps(metric_params(metric), sort_keys=True),
        payload_schema=codec.schema, root_node_id=start_node_id,
        center_strategy=tree.params.centers, seed=tree.params.seed)
    lab = {t: (str(labels[t]) if labels is not None else str(t)) for t in tids}
    return RelationalTreeImage(info, nodes, dists, pivs, objects, lab)


# --- import ----------------------------------------------------------------------

def _group(rows, what):
    groups: dict[int, list] = {}
    last = None
    for r in rows:
        k = r.node_id
        if last is not None and k < last:
            raise ImageError(f"{what} rows are not ordered by node id")
        last = k
        groups.setdefault(k, []).append(r)
    return groups


def _nodes_from_rows(nodes, dists, pivs, objects, root_id: int) -> Node:
    by_node = _group(nodes, "nodes")
    if not by_node:
        raise ImageError("image has no nodes")
    if next(iter(by_node)) != root_id:
        raise ImageError(f"first node {next(iter(by_node))} is not the root {root_id}")
    d_by = _group(dists, "distances")
    p_by = _group(pivs, "pivots")
    order = []
    built: dict[int, Node] = {}
    pending = [root_id]
    while pending:
        nid = pending.pop()
        if nid in built:
            raise ImageError(f"node {nid} is referenced twice")
        rows = by_node.get(nid)
        if rows is None:
            raise ImageError(f"dangling subtree reference to node {nid}")
        order.append(nid)
        if [r.entry for r in rows] != list(range(len(rows))):
            raise ImageError(f"node {nid}: entries are not 0..{len(rows) - 1} in order")
        subs = [r.subtree for r in rows]
        leaf = all(s == 0 for s in subs)
        if not leaf and any(s == 0 for s in subs):
            raise ImageError(f"node {nid} mixes leaf and inner entries")
        m = len(rows)
        D = np.zeros((m, m))
        drows = d_by.get(nid, [])
        if len(drows) != m * (m - 1) // 2:
            raise ImageError(f"node {nid}: expected {m * (m - 1) // 2} distance rows, got {len(drows)}")
        prev = None
        for r in drows:
            if not 0 <= r.entry1 < r.entry2 < m:
                raise ImageError(f"node {nid}: bad distance entries ({r.entry1}, {r.entry2})")
            if prev is not None and (r.entry1, r.entry2) <= prev:
                raise ImageError(f"node {nid}: distance rows out of order")
            prev = (r.entry1, r.entry2)
            D[r.entry1, r.entry2] = D[r.entry2, r.entry1] = r.distance
        prow = p_by.get(nid, [])
        if m >= 2:
            if [r.entry for r in prow] != list(range(m)):
                raise ImageError(f"node {nid}: pivot rows do not cover entries 0..{m - 1}")
            piv = tuple(r.entry for r in prow if r.is_pivot)
            if len(piv) != 2:
                raise ImageError(f"node {nid}: expected two pivots, got {len(piv)}")
            PD = np.array([r.pos for r in prow], dtype=float)
        else:
            if prow:
                raise ImageError(f"node {nid}: a single-entry node has no pivots")
            piv, PD = (), np.zeros((m, 0))
        try:
            objs = [objects[r.tid] for r in rows]
        except KeyError as e:
            raise ImageError(f"node {nid}: unknown object {e.args[0]}") from None
        oids = [r.tid for r in rows]
        if leaf:
            built[nid] = LeafNode(oids, objs, D, piv, PD, nid)
        else:
            built[nid] = InnerNode(oids, objs, D, piv, PD, subs, [r.max_dist for r in rows], nid)
            for s in reversed(subs):
                if s in built or s == nid:
                    raise ImageError(f"node {s} is referenced twice")
                pending.append(s)
    if order != list(by_node):
        raise ImageError("node order is not a depth-first preorder of the tree")
    for extra in (set(d_by) | set(p_by)) - set(by_node):
        raise ImageError(f"rows for unknown node {extra}")
    for node in built.values():
        if not node.is_leaf:
            node.children = [built[s] for s in node.children]
    return built[root_id]


def import_tree(img: RelationalTreeImage, metric: Metric | None = None) -> NTree:
    """Rebuild a tree from its image without evaluating the metric."""
    if img.info is None:
        raise ImageError("image lacks its TreeInfo row")
    info = img.info
    if metric is None:
        if info.metric_name not in METRICS:
            raise ImageError(f"metric {info.metric_name!r} must be supplied explicitly")
        metric = make_metric(info.metric_name, info.metric_params)
    params = NTreeParams(info.k, info.l, info.center_strategy, info.seed)
    tree = NTree(metric, params)
    root = _nodes_from_rows(img.nodes, img.distances, img.pivots, img.objects, info.root_node_id)
    size = max(img.objects) + 1 if img.objects else 0
    tree.objects = [img.objects.get(i) for i in range(size)]
    tree.root = root
    tree.live = {o for lf in tree.leaves() for o in lf.oids}
    return tree


# --- CSV -------------------------------------------------------------------------------

def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def save_image(img: RelationalTreeImage, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    codec = PayloadCodec.from_schema(img.info.payload_schema)
    with open(d / NODES_FILE, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["Id", *codec.columns(), "TID", "NodeId", "Entry", "Subtree", "MaxDist"])
        for r in img.nodes:
            w.writerow([img.labels.get(r.tid, str(r.tid)), *codec.encode(r.tid, img.objects[r.tid]),
                        r.tid, r.node_id, r.entry, r.subtree, fmt_real(r.max_dist)])
    with open(d / DISTANCES_FILE, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["NodeId", "Entry1", "Entry2", "Distance"])
        for r in img.distances:
            w.writerow([r.node_id, r.entry1, r.entry2, fmt_real(r.distance)])
    with open(d / PIVOTS_FILE, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["NodeId", "Entry", "PosX", "PosY", "IsPivot"])
        for r in img.pivots:
            w.writerow([r.node_id, r.entry, fmt_real(r.pos[0]), fmt_real(r.pos[1]), int(r.is_pivot)])
    with open(d / INFO_FILE, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["K", "L", "MetricName", "MetricParams", "PayloadSchema", "RootNodeId",
                    "CenterStrategy", "Seed"])
        i = img.info
        w.writerow([i.k, i.l, i.metric_name, i.metric_params, i.payload_schema, i.root_node_id,
                    i.center_strategy, i.seed])
    if codec.kind == "trajectories":
        write_unit_table(d / TRAJ_FILE, sorted(img.objects.items()))


def _rows(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"missing table {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ImageError(f"{path} has no header")
        return header, [r for r in reader if r]


def load_image(directory) -> RelationalTreeImage:
    d = Path(directory)
    _, info_rows = _rows(d / INFO_FILE)
    if len(info_rows) != 1:
        raise ImageError(f"expected one TreeInfo row, found {len(info_rows)}")
    r = info_rows[0]
    info = TreeInfoRow(int(r[0]), int(r[1]), r[2], r[3], r[4], int(r[5]), r[6], int(r[7]))
    codec = PayloadCodec.from_schema(info.payload_schema)
    sidecar = read_unit_table(d / TRAJ_FILE) if codec.kind == "trajectories" else None
    header, node_rows = _rows(d / NODES_FILE)
    width = len(codec.columns())
    nodes, objects, labels = [], {}, {}
    for rec in node_rows:
        if len(rec) != len(header):
            raise ImageError(f"nodes row has {len(rec)} fields, expected {len(header)}")
        tid = int(rec[1 + width])
        if tid not in objects:
            objects[tid] = codec.decode(rec[1:1 + width], sidecar)
            labels[tid] = rec[0]
        nid, entry, sub, md = rec[2 + width:]
        nodes.append(NodesRow(tid, int(nid), int(entry), int(sub), float(md)))
    _, drows = _rows(d / DISTANCES_FILE)
    dists = [DistancesRow(int(a), int(b), int(c), float(x)) for a, b, c, x in drows]
    _, prows = _rows(d / PIVOTS_FILE)
    pivs = [PivotsRow(int(a), int(b), (float(x), float(y)), p == "1") for a, b, x, y, p in prows]
    return RelationalTreeImage(info, nodes, dists, pivs, objects, labels)


def save_tree(tree: NTree, directory, labels=None, start_node_id: int = 0) -> RelationalTreeImage:
    img = export_tree(tree, start_node_id, labels)
    save_image(img, directory)
    return img


def load_tree(directory, metric: Metric | None = None) -> tuple[NTree, dict[int, str]]:
    img = load_image(directory)
    return import_tree(img, metric), img.labels


# --- parallel construction -----------------------------------------------------------------

@dataclass
class BuildReport:
    workers: int
    task_sizes: list[int]
    worker_busy: dict[int, float]
    utilization: float
    wall_seconds: float
    evaluations: int


class _Placeholder(LeafNode):
    __slots__ = ("task",)


def _subtree_task(oids, objs, params, metric, path):
    t0 = time.perf_counter()
    counted = CountingMetric(metric)
    node = build_node(oids, objs, params, counted, path)
    rows = _node_rows(node, 0)
    return rows, counted.evaluations, time.perf_counter() - t0, os.getpid()


def utilization(busy: Sequence[float], workers: int) -> float:
    """Total work over ``workers`` times the largest per-worker work."""
    top = max(busy, default=0.0)
    if top <= 0:
        return 1.0
    return float(sum(busy) / (workers * top))


def parallel_build(objects: Sequence, metric: Metric, params: NTreeParams | None = None,
                   workers: int = 1) -> tuple[NTree, BuildReport]:
    """Build an N-tree with the subtrees below the second level in parallel.

    The top two levels are partitioned here; every level-2 subtree becomes a
    task. Tasks are dispatched largest first. The result is the same tree a
    sequential :meth:`NTree.build` produces with the same parameters.
    """
    if workers < 1:
        raise ValueError("workers must be positive")
    t_start = time.perf_counter()
    tree = NTree(metric, params)
    tree.objects = list(objects)
    if not tree.objects:
        raise ValueError("nothing to build")
    tasks: list[_Placeholder] = []

    def defer(oids, objs, path):
        ph = _Placeholder([], [], None, (), None)
        ph.task = (oids, objs, path)
        tasks.append(ph)
        return ph

    ids = list(range(len(tree.objects)))
    tree.root = build_node(ids, tree.objects, tree.params, tree.metric, (), defer)
    order = sorted(range(len(tasks)), key=lambda t: -len(tasks[t].task[0]))
    raw = unwrap(tree.metric)
    results: dict[int, Any] = {}
    busy: dict[int, float] = defaultdict(float)
    if workers == 1 or not tasks:
        for t in order:
            results[t] = _subtree_task(*tasks[t].task[:2], tree.params, raw, tasks[t].task[2])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(_subtree_task, tasks[t].task[0], tasks[t].task[1], tree.params,
                                raw, tasks[t].task[2]): t for t in order}
            for f in as_completed(futs):
                results[futs[f]] = f.result()
    pieces = {}
    for t, ((nodes, dists, pivs), evals, secs, pid) in results.items():
        tree.metric.add(evals)
        busy[pid] += secs
        oids = tasks[t].task[0]
        objs = {o: tree.objects[o] for o in oids}
        pieces[id(tasks[t])] = _nodes_from_rows(nodes, dists, pivs, objs, 0)
    for node, _ in list(tree.nodes()):
        if not node.is_leaf:
            node.children = [pieces.get(id(c), c) for c in node.children]
    if isinstance(tree.root, _Placeholder):
        tree.root = pieces[id(tree.root)]
    tree.live = set(ids)
    tree.renumber()
    w = list(busy.values()) + [0.0] * max(0, workers - len(busy))
    report = BuildReport(workers, sorted((len(p.task[0]) for p in tasks), reverse=True), dict(busy),
                         utilization(w, workers), time.perf_counter() - t_start,
                         tree.metric.evaluations)
    return tree, report
