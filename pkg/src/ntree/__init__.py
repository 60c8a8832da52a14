"""Exact metric-space similarity search with the N-tree.

The main entry points are :class:`NTree` for construction and updates,
:func:`range_search` and :func:`knn` for queries, and the trajectory metric
:class:`DistanceAvg`.
"""

from .metrics import CountingMetric, DimensionError, Point2D, euclidean2d, jaccard, l1norm
from .search import QueryStats, brute_force_knn, brute_force_range, knn, range_search
from .trajectory import DistanceAvg, Hausdorff, Trajectory, adjust, distance_avg
from .tree import NTree, NTreeParams

__all__ = [
    "CountingMetric", "DimensionError", "Point2D", "euclidean2d", "jaccard", "l1norm",
    "QueryStats", "brute_force_knn", "brute_force_range", "knn", "range_search",
    "DistanceAvg", "Hausdorff", "Trajectory", "adjust", "distance_avg",
    "NTree", "NTreeParams",
]
