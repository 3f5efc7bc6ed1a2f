"""Exact nearest-neighbour index over a fixed 3-D point set.

Two query routes with identical results:

* :meth:`NeighborIndex.query` walks a balanced kd-tree (median split,
  cycling axes) — the classic single-query path.
* :meth:`NeighborIndex.query_batch` evaluates all candidates with a
  vectorised distance matrix — faster for the large batched lookups the
  registration loops perform.

Both are exact and break distance ties by returning the lowest point
index, so they agree with a brute-force scan bit for bit.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionError, EmptyInputError

__all__ = ["NeighborIndex"]


class _Node:
    __slots__ = ("index", "axis", "left", "right")

    def __init__(self, index: int, axis: int, left, right):
        self.index = index
        self.axis = axis
        self.left = left
        self.right = right


class NeighborIndex:
    """Nearest-neighbour queries against a fixed set of 3-D points."""

    def __init__(self, points):
        pts = getattr(points, "points", points)
        arr = np.asarray(pts, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise DimensionError(f"index points must have shape (N, 3), got {arr.shape}")
        if arr.shape[0] < 1:
            raise EmptyInputError("cannot build a neighbour index over an empty set")
        self._points = np.ascontiguousarray(arr)
        self._root = self._build(np.arange(arr.shape[0], dtype=np.intp), 0)

    def __len__(self) -> int:
        return self._points.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self._points

    def _build(self, indices: np.ndarray, depth: int):
        if indices.size == 0:
            return None
        axis = depth % 3
        mid = indices.size // 2
        order = np.argpartition(self._points[indices, axis], mid)
        indices = indices[order]
        return _Node(
            int(indices[mid]),
            axis,
            self._build(indices[:mid], depth + 1),
            self._build(indices[mid + 1 :], depth + 1),
        )

    def query(self, point) -> tuple[int, float]:
        """Index and Euclidean distance of the nearest stored point.

        Ties are broken toward the lowest index.
        """
        q = np.asarray(point, dtype=np.float64).reshape(-1)
        if q.shape != (3,):
            raise DimensionError(f"query point must have shape (3,), got {q.shape}")
        pts = self._points
        best_sq = math.inf
        best_idx = -1

        def visit(node):
            nonlocal best_sq, best_idx
            p = pts[node.index]
            dx = p[0] - q[0]
            dy = p[1] - q[1]
            dz = p[2] - q[2]
            sq = (dx * dx + dy * dy) + dz * dz
            if sq < best_sq or (sq == best_sq and node.index < best_idx):
                best_sq = sq
                best_idx = node.index
            gap = q[node.axis] - p[node.axis]
            near, far = (node.left, node.right) if gap < 0.0 else (node.right, node.left)
            if near is not None:
                visit(near)
            # An equal-distance tie can hide on the far side, so prune
            # only when the slab is strictly farther than the current best.
            if far is not None and gap * gap <= best_sq:
                visit(far)

        visit(self._root)
        return best_idx, math.sqrt(best_sq)

    def query_batch(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Nearest index and distance for each row of an (M, 3) array.

        Vectorised exhaustive search; argmin returns the first (lowest)
        index on ties, matching :meth:`query`.
        """
        q = np.asarray(points, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != 3:
            raise DimensionError(f"query batch must have shape (M, 3), got {q.shape}")
        sq = cdist(q, self._points, "sqeuclidean")
        idx = sq.argmin(axis=1)
        return idx, np.sqrt(sq[np.arange(q.shape[0]), idx])
