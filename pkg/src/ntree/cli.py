"""Command-line interface: ``ntree <command> ...``.

Exit status is 0 on success, 2 when arguments or inputs are invalid and 1
when a command fails while running.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import datasets as dsets
from .filter_refine import FRStats, build_axis_index, exact_range, make_records, range_scan_fr, range_search_fr
from .metrics import unwrap
from .persistence import export_tree, load_image, load_tree, metric_name_of, parallel_build, save_image, save_tree
from .search import DISTANCE_ESTIMATES, QueryStats, knn, range_search
from .tree import NTree, NTreeParams

STATS_COLUMNS = ["param", "mean_time_us", "mean_dist_evals", "mean_result_size"]


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get("NTREE_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"NTREE_SEED must be an integer, got {raw!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


# --- helpers -----------------------------------------------------------------------

def _load_data(path, metric_name: str | None, spatial_only=False):
    ds = dsets.load_dataset(path, spatial_only=spatial_only)
    name = metric_name or dsets.DEFAULT_METRIC[ds.kind]
    if name not in dsets.METRICS:
        raise UsageError(f"unknown metric {name!r}")
    dsets.check_kind(name, ds.kind)
    metric = dsets.make_metric(name)
    return ds, name, metric


def _open_index(path):
    if not Path(path, "treeinfo.csv").exists():
        raise FileNotFoundError(f"no index at {path}")
    tree, labels = load_tree(path)
    by_label = {lab: tid for tid, lab in labels.items()}
    return tree, labels, by_label


def _queries(args, tree, labels, by_label):
    """``(label, object)`` pairs from --query-id or --query-file."""
    metric = unwrap(tree.metric)
    if args.query_id is not None:
        if args.query_id not in by_label:
            raise UsageError(f"no object with id {args.query_id!r} in the index")
        return [(args.query_id, tree.objects[by_label[args.query_id]])]
    if args.query_file is None:
        raise UsageError("give --query-id or --query-file")
    ds = dsets.load_dataset(args.query_file)
    dsets.check_kind(metric_name_of(tree.metric), ds.kind)
    return list(zip(ds.ids, dsets.prepare(ds.objects, metric)))


def _print_hits(out, hits, labels, header=None):
    if header is not None:
        print(f"# query {header}", file=out)
    for oid, d in hits:
        print(f"{labels.get(oid, oid)},{d!r}", file=out)


# --- commands --------------------------------------------------------------------------

def cmd_gen(args, out):
    opts = {}
    if args.len is not None:
        if args.kind != "trajectories-randomwalk":
            raise UsageError("--len applies to trajectories only")
        opts["length"] = args.len
    if args.dim is not None:
        if args.kind != "vectors":
            raise UsageError("--dim applies to vectors only")
        opts["dim"] = args.dim
    if args.clusters is not None:
        if args.kind != "points2d-clustered":
            raise UsageError("--clusters applies to clustered points only")
        opts["clusters"] = args.clusters
    seed = args.seed if args.seed is not None else _default_seed()
    ds = dsets.generate(args.kind, args.n, seed, **opts)
    dsets.write_dataset(args.out, ds)
    print(f"wrote {len(ds)} {ds.kind} to {args.out}", file=out)


def cmd_build(args, out):
    ds, name, metric = _load_data(args.data, args.metric, args.spatial_only)
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        params = NTreeParams(args.k, args.l, args.centers, seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    objs = dsets.prepare(ds.objects, metric)
    if args.parallel > 1:
        tree, rep = parallel_build(objs, metric, params, args.parallel)
        print(f"parallel build: {len(rep.task_sizes)} tasks, utilization {rep.utilization:.3f}", file=out)
    else:
        tree = NTree.build(objs, metric, params)
    save_tree(tree, args.out, ds.ids)
    print(f"indexed {tree.size} objects, height {tree.height()}, "
          f"{tree.metric.evaluations} distance evaluations -> {args.out}", file=out)


def cmd_range(args, out):
    if args.r < 0:
        raise UsageError("--r must be non-negative")
    tree, labels, by_label = _open_index(args.index)
    qs = _queries(args, tree, labels, by_label)
    for qid, q in qs:
        res = range_search(tree, q, args.r)
        hits = sorted(((oid, d if d is not None else tree.metric(q, tree.objects[oid]))
                       for oid, d in res.items()), key=lambda t: (t[1], t[0]))
        _print_hits(out, hits, labels, qid if len(qs) > 1 else None)


def cmd_knn(args, out):
    tree, labels, by_label = _open_index(args.index)
    if args.k > tree.size:
        raise UsageError(f"k={args.k} exceeds the {tree.size} indexed objects")
    qs = _queries(args, tree, labels, by_label)
    for qid, q in qs:
        _print_hits(out, knn(tree, q, args.k, args.de, seed=args.seed), labels, qid if len(qs) > 1 else None)


def cmd_export(args, out):
    tree, labels, _ = _open_index(args.index)
    img = export_tree(tree, args.start_node_id, [labels.get(i, str(i)) for i in range(len(tree.objects))])
    save_image(img, args.out)
    print(f"exported {len(img.nodes)} node rows to {args.out}", file=out)


def cmd_import(args, out):
    img = load_image(args.index)
    tree, _ = load_tree(args.index)
    n_nodes = sum(1 for _ in tree.nodes())
    print(f"nodes={n_nodes} objects={tree.size} height={tree.height()} "
          f"metric={img.info.metric_name} evaluations={tree.metric.evaluations}", file=out)


def cmd_bench(args, out):
    tree, labels, _ = _open_index(args.index)
    if (args.radii is None) == (args.k_values is None):
        raise UsageError("give exactly one of --radii and --k-values")
    if args.k_values and max(args.k_values) > tree.size:
        raise UsageError(f"k exceeds the {tree.size} indexed objects")
    if any(r < 0 for r in args.radii or []):
        raise UsageError("radii must be non-negative")
    rng = np.random.default_rng(args.seed if args.seed is not None else _default_seed())
    live = sorted(tree.live)
    picks = rng.choice(len(live), size=args.queries, replace=len(live) < args.queries)
    queries = [tree.objects[live[i]] for i in picks]
    params = args.radii if args.radii is not None else args.k_values

    def one(q, p):
        st = QueryStats()
        if args.radii is not None:
            range_search(tree, q, p, st)
        else:
            knn(tree, q, int(p), args.de, stats=st)
        return st

    rows = []
    for p in params:
        if args.threads > 1:
            with ThreadPoolExecutor(args.threads) as ex:
                stats = list(ex.map(lambda q: one(q, p), queries))
        else:
            stats = [one(q, p) for q in queries]
        rows.append([p, np.mean([s.elapsed_us for s in stats]),
                     np.mean([s.distance_evaluations for s in stats]),
                     np.mean([s.result_size for s in stats])])
    new = not Path(args.out).exists()
    with open(args.out, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(STATS_COLUMNS)
        for p, t, e, s in rows:
            w.writerow([p, f"{t:.1f}", f"{e:.2f}", f"{s:.2f}"])
    for p, t, e, s in rows:
        print(f"{p}\t{t:.1f}us\t{e:.2f} evals\t{s:.2f} results", file=out)


def cmd_fr(args, out):
    ds, name, metric = _load_data(args.data, "distanceavg")
    if args.approx_radius <= 0:
        raise UsageError("--approx-radius must be positive")
    seed = args.seed if args.seed is not None else _default_seed()
    recs = make_records(ds.ids, ds.objects, args.approx_radius)
    try:
        params = NTreeParams(args.k, args.l, "greedy", seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    index = build_axis_index(recs, params) if args.mode == "tree" else None
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(recs), size=min(args.queries, len(recs)), replace=False)
    print("q,mean_result_size,mean_filter_candidates,mean_exact_evals,mismatches", file=out)
    for q in args.q:
        sizes, cands, exact, bad = [], [], [], 0
        for i in picks:
            st = FRStats()
            if index is None:
                res = range_scan_fr(recs, recs[i], q, args.approx_radius, st)
            else:
                res = range_search_fr(recs, index, recs[i], q, args.approx_radius, st)
            if args.verify and sorted(res) != sorted(exact_range(recs, recs[i], q)):
                bad += 1
            sizes.append(len(res))
            cands.append(st.filter_candidates)
            exact.append(st.exact_evaluations)
        print(f"{q},{np.mean(sizes):.2f},{np.mean(cands):.2f},{np.mean(exact):.2f},{bad}", file=out)


def cmd_histogram(args, out):
    ds, name, metric = _load_data(args.data, args.metric, args.spatial_only)
    n = len(ds)
    if args.pairs > n * (n - 1) // 2:
        raise UsageError(f"{args.pairs} pairs requested but only {n * (n - 1) // 2} exist")
    seed = args.seed if args.seed is not None else _default_seed()
    lo, counts = dsets.distance_histogram(dsets.prepare(ds.objects, metric), metric, args.pairs, seed)
    dest = open(args.out, "w", newline="", encoding="utf-8") if args.out else out
    try:
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(["bucket", "count"])
        for b, c in zip(lo, counts):
            w.writerow([repr(float(b)), int(c)])
    finally:
        if args.out:
            dest.close()


# --- parser ----------------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ntree", description="N-tree metric index")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--kind", required=True, choices=sorted(dsets.GEN_KINDS))
    g.add_argument("--n", type=_positive, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--len", type=int, help="samples per trajectory")
    g.add_argument("--dim", type=_positive, help="vector length")
    g.add_argument("--clusters", type=_positive)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("build", help="build an index and write its tables")
    b.add_argument("--data", required=True)
    b.add_argument("--metric", choices=sorted(dsets.METRICS))
    b.add_argument("--k", type=int, default=36)
    b.add_argument("--l", type=int, default=100)
    b.add_argument("--seed", type=int)
    b.add_argument("--centers", choices=["greedy", "random"], default="greedy")
    b.add_argument("--parallel", type=_positive, default=1)
    b.add_argument("--spatial-only", action="store_true")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    for name, fn in (("range", cmd_range), ("knn", cmd_knn)):
        q = sub.add_parser(name, help=f"{name} query")
        q.add_argument("--index", required=True)
        if name == "range":
            q.add_argument("--r", type=float, required=True)
        else:
            q.add_argument("--k", type=_positive, required=True)
            q.add_argument("--de", choices=sorted(DISTANCE_ESTIMATES), default="DE3")
            q.add_argument("--seed", type=int, default=0)
        grp = q.add_mutually_exclusive_group()
        grp.add_argument("--query-id")
        grp.add_argument("--query-file")
        q.set_defaults(func=fn)

    e = sub.add_parser("export", help="rewrite an index with another first node id")
    e.add_argument("--index", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--start-node-id", type=int, default=0)
    e.set_defaults(func=cmd_export)

    i = sub.add_parser("import", help="load an index and report its shape")
    i.add_argument("--index", required=True)
    i.set_defaults(func=cmd_import)

    be = sub.add_parser("bench", help="sweep radii or k over random dataset queries")
    be.add_argument("--index", required=True)
    be.add_argument("--radii", type=_floats)
    be.add_argument("--k-values", type=_ints)
    be.add_argument("--de", choices=sorted(DISTANCE_ESTIMATES), default="DE3")
    be.add_argument("--queries", type=_positive, default=100)
    be.add_argument("--seed", type=int)
    be.add_argument("--threads", type=_positive, default=1)
    be.add_argument("--out", required=True)
    be.set_defaults(func=cmd_bench)

    f = sub.add_parser("fr", help="filter-and-refine range queries on trajectories")
    f.add_argument("--data", required=True)
    f.add_argument("--approx-radius", type=float, required=True)
    f.add_argument("--q", type=_floats, required=True, help="comma-separated query radii")
    f.add_argument("--mode", choices=["scan", "tree"], default="tree")
    f.add_argument("--queries", type=_positive, default=100)
    f.add_argument("--k", type=int, default=36)
    f.add_argument("--l", type=int, default=100)
    f.add_argument("--seed", type=int)
    f.add_argument("--verify", action="store_true", help="compare with an exact scan")
    f.set_defaults(func=cmd_fr)

    h = sub.add_parser("histogram", help="distance distribution of random pairs")
    h.add_argument("--data", required=True)
    h.add_argument("--metric", choices=sorted(dsets.METRICS))
    h.add_argument("--pairs", type=_positive, default=500_000)
    h.add_argument("--seed", type=int)
    h.add_argument("--spatial-only", action="store_true")
    h.add_argument("--out")
    h.set_defaults(func=cmd_histogram)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        args.func(args, out)
    except (UsageError, FileNotFoundError, dsets.KindMismatchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - report and map to the runtime exit code
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
