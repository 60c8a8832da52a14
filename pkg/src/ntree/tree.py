"""The N-tree: a metric tree over Voronoi partitions with pivot-ordered routing.

Every node keeps its entries (centers for inner nodes, objects for leaves),
the pairwise distance matrix ``D`` between them, two pivot entries and the
pivot-distance rows ``PD``. Routing to the closest entry goes through
:func:`closest_center`, which visits candidates in the order suggested by the
pivot rows and skips those that the triangle inequality rules out.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterator, Sequence

import numpy as np

from .metrics import CountingMetric, Metric

CENTER_STRATEGIES = ("greedy", "random")


@dataclass(frozen=True)
class NTreeParams:
    k: int = 36
    l: int = 100
    centers: str = "greedy"
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.k <= self.l:
            raise ValueError(f"need 2 <= k <= l, got k={self.k}, l={self.l}")
        if self.centers not in CENTER_STRATEGIES:
            raise ValueError(f"unknown center strategy {self.centers!r}")


class Node:
    """Common part of inner nodes and leaves.

    Attributes
    ----------
    oids : list of int
        Object ids of the entries.
    objs : list
        The entry objects, parallel to ``oids``.
    D : ndarray, shape (m, m)
        Pairwise entry distances.
    pivots : tuple of int
        Entry positions of the two pivots; empty for a one-entry node.
    PD : ndarray, shape (m, 2)
        Distances of every entry to the two pivots.
    """

    __slots__ = ("oids", "objs", "D", "pivots", "PD", "node_id")
    is_leaf = False

    def __init__(self, oids, objs, D, pivots, PD, node_id=-1):
        self.oids = list(oids)
        self.objs = list(objs)
        self.D = D
        self.pivots = tuple(pivots)
        self.PD = PD
        self.node_id = node_id

    def __len__(self) -> int:
        return len(self.oids)


class LeafNode(Node):
    __slots__ = ()
    is_leaf = True


class InnerNode(Node):
    __slots__ = ("children", "radii")

    def __init__(self, oids, objs, D, pivots, PD, children, radii, node_id=-1):
        super().__init__(oids, objs, D, pivots, PD, node_id)
        self.children = list(children)
        self.radii = np.asarray(radii, dtype=float)


# --- auxiliary information ---------------------------------------------------

def pairwise(objs: Sequence, metric: Metric) -> np.ndarray:
    m = len(objs)
    D = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            D[i, j] = D[j, i] = metric(objs[i], objs[j])
    return D


def choose_pivots(m: int, rng: np.random.Generator) -> tuple[int, ...]:
    if m == 1:
        return ()
    if m == 2:
        return (0, 1)
    return tuple(sorted(int(i) for i in rng.choice(m, size=2, replace=False)))


def pivot_rows(D: np.ndarray, pivots: tuple[int, ...]) -> np.ndarray:
    if not pivots:
        return np.zeros((D.shape[0], 0))
    return D[:, list(pivots)].copy()


# --- closest center -------------------------------------------------------------

def closest_center(node: Node, dist: Callable[[Any], float], dq: dict[int, float] | None = None):
    """Entry of ``node`` nearest to the query, with its distance.

    ``dist(obj)`` evaluates the query distance to one entry object. Every
    evaluated distance is recorded in ``dq`` (entry position -> distance).

    Returns
    -------
    (int, float)
        Position of the closest entry and its distance. On ties the first
        minimal entry encountered wins.
    """
    if dq is None:
        dq = {}
    objs = node.objs

    def ev(i):
        u = dq.get(i)
        if u is None:
            u = dq[i] = dist(objs[i])
        return u

    m = len(objs)
    if m == 1:
        return 0, ev(0)
    vq = np.array([ev(p) for p in node.pivots])
    gap = node.PD - vq
    order = np.argsort(np.hypot(gap[:, 0], gap[:, 1]), kind="stable")
    D = node.D
    best, dmin = -1, np.inf
    cand = order
    while cand.size:
        i = int(cand[0])
        u = ev(i)
        if u < dmin:
            best, dmin = i, u
        rest = cand[1:]
        di = D[i, rest]
        cand = rest[(u - dmin < di) & (di < u + dmin)]
    return best, dmin


# --- construction -----------------------------------------------------------------

def determine_centers_greedy(objs: Sequence, k: int, rng: np.random.Generator, metric: Metric):
    """Pick ``k`` far-apart centers among ``min(3k, n)`` random candidates.

    Returns the chosen positions in ``objs`` and the distance matrix between
    them, which falls out of the selection for free.
    """
    n = len(objs)
    m = min(3 * k, n)
    cand = rng.choice(n, size=m, replace=False)
    chosen = [int(rng.integers(m))]
    rows = []
    mind = np.full(m, np.inf)
    while len(chosen) < k:
        last = objs[cand[chosen[-1]]]
        row = np.array([0.0 if j == chosen[-1] else metric(last, objs[cand[j]]) for j in range(m)])
        rows.append(row)
        mind = np.minimum(mind, row)
        mind[chosen] = -1.0
        chosen.append(int(np.argmax(mind)))
    D = np.zeros((k, k))
    for a in range(k - 1):
        for b in range(a + 1, k):
            D[a, b] = D[b, a] = rows[a][chosen[b]]
    return [int(cand[c]) for c in chosen], D


def determine_centers_random(objs: Sequence, k: int, rng: np.random.Generator, metric: Metric):
    idx = [int(i) for i in rng.choice(len(objs), size=k, replace=False)]
    return idx, pairwise([objs[i] for i in idx], metric)


def node_rng(seed: int, path: Sequence[int]) -> np.random.Generator:
    """RNG for the node reached by ``path`` (child positions from the root)."""
    return np.random.default_rng([int(seed), len(path), *map(int, path)])


def make_leaf(oids, objs, metric, rng) -> LeafNode:
    D = pairwise(objs, metric)
    piv = choose_pivots(len(objs), rng)
    return LeafNode(oids, objs, D, piv, pivot_rows(D, piv))


def partition(objs: Sequence, centers: Node, center_pos: Sequence[int], metric: Metric):
    """Assign every object to its closest center.

    Centers land in their own partition at distance 0 without evaluation.
    Returns per-center member positions, radii, and the number of members
    that coincide with their center (distance 0, the center included).
    """
    k = len(center_pos)
    members: list[list[int]] = [[] for _ in range(k)]
    radii = np.zeros(k)
    same = np.zeros(k, dtype=int)
    pinned = {p: i for i, p in enumerate(center_pos)}
    for s, obj in enumerate(objs):
        i = pinned.get(s)
        if i is not None:
            members[i].append(s)
            same[i] += 1
            continue
        i, d = closest_center(centers, lambda c: metric(obj, c))
        members[i].append(s)
        if d > radii[i]:
            radii[i] = d
        elif d == 0:
            same[i] += 1
    return members, radii, same


def build_node(oids, objs, params: NTreeParams, metric: Metric, path=(), defer=None) -> Node:
    """Recursive construction of the subtree for ``objs``.

    ``defer(oids, objs, path)`` may be given to hand subtrees below the
    second level to someone else; it must return a placeholder node.
    """
    rng = node_rng(params.seed, path)
    if len(objs) <= params.l:
        return make_leaf(oids, objs, metric, rng)
    pick = determine_centers_greedy if params.centers == "greedy" else determine_centers_random
    pos, D = pick(objs, params.k, rng, metric)
    piv = choose_pivots(params.k, rng)
    node = InnerNode([oids[p] for p in pos], [objs[p] for p in pos], D, piv, pivot_rows(D, piv), [], [])
    members, radii, same = partition(objs, node, pos, metric)
    node.radii = radii
    for i, mem in enumerate(members):
        sub_oids = [oids[s] for s in mem]
        sub_objs = [objs[s] for s in mem]
        sub_path = (*path, i)
        if len(mem) > params.l and len(mem) - same[i] < params.l:
            # overflow caused by copies of the center: splitting them cannot
            # make progress, so keep them in one oversized leaf
            child = make_leaf(sub_oids, sub_objs, metric, node_rng(params.seed, sub_path))
        elif defer is not None and len(sub_path) == 2:
            child = defer(sub_oids, sub_objs, sub_path)
        else:
            child = build_node(sub_oids, sub_objs, params, metric, sub_path, defer)
        node.children.append(child)
    return node


# --- tree ----------------------------------------------------------------------------

def _same(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(a, b)
    return bool(a == b)


class NTree:
    """N-tree over a growing list of objects.

    Objects are addressed by integer ids (their position in :attr:`objects`).
    Deleted objects keep their slot because they may still serve as routing
    centers in inner nodes.

    Parameters
    ----------
    metric : callable
        Distance function; wrapped in a :class:`CountingMetric` if needed.
    params : NTreeParams
    """

    def __init__(self, metric: Metric, params: NTreeParams | None = None):
        self.metric = metric if isinstance(metric, CountingMetric) else CountingMetric(metric)
        self.params = params or NTreeParams()
        self.objects: list = []
        self.root: Node | None = None
        self.live: set[int] = set()

    @classmethod
    def build(cls, objects: Sequence, metric: Metric, params: NTreeParams | None = None) -> "NTree":
        tree = cls(metric, params)
        tree.objects = list(objects)
        if tree.objects:
            tree.root = build_node(list(range(len(tree.objects))), tree.objects, tree.params, tree.metric)
            tree.live = set(range(len(tree.objects)))
            tree.renumber()
        return tree

    @property
    def size(self) -> int:
        return len(self.live)

    def __len__(self) -> int:
        return len(self.live)

    # traversal

    def nodes(self) -> Iterator[tuple[Node, tuple[int, ...]]]:
        """Nodes in depth-first preorder, with their child-position paths."""
        if self.root is None:
            return
        stack = [(self.root, ())]
        while stack:
            node, path = stack.pop()
            yield node, path
            if not node.is_leaf:
                for i in range(len(node.children) - 1, -1, -1):
                    stack.append((node.children[i], (*path, i)))

    def leaves(self) -> Iterator[LeafNode]:
        return (n for n, _ in self.nodes() if n.is_leaf)

    def renumber(self, start: int = 0) -> None:
        for i, (node, _) in enumerate(self.nodes()):
            node.node_id = start + i

    def live_oids(self) -> list[int]:
        return [o for leaf in self.leaves() for o in leaf.oids]

    def height(self) -> int:
        return max((len(p) for _, p in self.nodes()), default=-1) + 1

    # updates

    def _descend(self, x, raise_radii: bool):
        node, parent, path = self.root, [], ()
        dist = lambda c: self.metric(x, c)
        while not node.is_leaf:
            i, d = closest_center(node, dist)
            if raise_radii and d > node.radii[i]:
                node.radii[i] = d
            parent.append((node, i))
            path = (*path, i)
            node = node.children[i]
        return node, parent, path

    def _replace(self, parent, new):
        if parent:
            p, i = parent[-1]
            p.children[i] = new
        else:
            self.root = new

    def insert(self, x) -> int:
        """Add ``x`` and return its object id."""
        oid = len(self.objects)
        self.objects.append(x)
        self.live.add(oid)
        if self.root is None:
            self.root = make_leaf([oid], [x], self.metric, node_rng(self.params.seed, ()))
            self.renumber()
            return oid
        leaf, parent, path = self._descend(x, raise_radii=True)
        if len(leaf) + 1 <= self.params.l:
            row = np.array([self.metric(x, o) for o in leaf.objs])
            m = len(leaf)
            D = np.zeros((m + 1, m + 1))
            D[:m, :m] = leaf.D
            D[m, :m] = D[:m, m] = row
            leaf.D = D
            leaf.oids.append(oid)
            leaf.objs.append(x)
            if not leaf.pivots:
                leaf.pivots = (0, 1)
            leaf.PD = pivot_rows(D, leaf.pivots)
        else:
            new = build_node(leaf.oids + [oid], leaf.objs + [x], self.params, self.metric, path)
            self._replace(parent, new)
        self.renumber()
        return oid

    def delete(self, x) -> bool:
        """Remove one copy of ``x``; return whether one was found."""
        if self.root is None:
            return False
        leaf, parent, path = self._descend(x, raise_radii=False)
        pos = next((j for j, o in enumerate(leaf.objs) if _same(o, x)), None)
        if pos is None:
            return False
        self.live.discard(leaf.oids[pos])
        del leaf.oids[pos]
        del leaf.objs[pos]
        if leaf.oids:
            keep = [j for j in range(leaf.D.shape[0]) if j != pos]
            leaf.D = leaf.D[np.ix_(keep, keep)]
            m = len(leaf.oids)
            if m == 1:
                leaf.pivots = ()
            elif pos in leaf.pivots or m == 2:
                # pick a replacement from entries already in D: no evaluations
                kept = [p - (p > pos) for p in leaf.pivots if p != pos]
                for j in range(m):
                    if len(kept) == 2:
                        break
                    if j not in kept:
                        kept.append(j)
                leaf.pivots = tuple(sorted(kept))
            else:
                leaf.pivots = tuple(p - (p > pos) for p in leaf.pivots)
            leaf.PD = pivot_rows(leaf.D, leaf.pivots)
        elif not parent:
            self.root = None
        else:
            pnode, _ = parent[-1]
            sub = [(o, ob) for lf in _leaves_under(pnode) for o, ob in zip(lf.oids, lf.objs)]
            new = build_node([o for o, _ in sub], [ob for _, ob in sub], self.params,
                             self.metric, path[:-1])
            self._replace(parent[:-1], new)
        self.renumber()
        return True


def _leaves_under(node: Node) -> Iterator[LeafNode]:
    stack = [node]
    while stack:
        n = stack.pop()
        if n.is_leaf:
            yield n
        else:
            stack.extend(reversed(n.children))


def subtree_objects(node: Node) -> list[tuple[int, Any]]:
    return [(o, ob) for lf in _leaves_under(node) for o, ob in zip(lf.oids, lf.objs)]
