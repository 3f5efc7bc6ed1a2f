"""Nearest-neighbour index tests: exact agreement with brute force."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointreg import NeighborIndex, PointSet
from pointreg.errors import DimensionError, EmptyInputError


def _brute(points: np.ndarray, q: np.ndarray) -> tuple[int, float]:
    d = np.linalg.norm(points - q, axis=1)
    idx = int(d.argmin())  # argmin takes the lowest index on ties
    return idx, float(d[idx])


def test_single_point_index():
    idx = NeighborIndex([[1.0, 2.0, 3.0]])
    assert len(idx) == 1
    i, d = idx.query([1.0, 2.0, 4.0])
    assert (i, d) == (0, 1.0)


def test_query_matches_brute_force_exactly(rng):
    pts = rng.normal(size=(257, 3))
    index = NeighborIndex(pts)
    queries = np.vstack([rng.normal(size=(100, 3)), pts[rng.integers(0, 257, 50)]])
    for q in queries:
        bi, bd = _brute(pts, q)
        i, d = index.query(q)
        assert i == bi
        assert d == bd


def test_query_batch_matches_query(rng):
    pts = rng.normal(size=(64, 3))
    index = NeighborIndex(pts)
    queries = rng.normal(size=(200, 3))
    idx_b, dist_b = index.query_batch(queries)
    for k, q in enumerate(queries):
        i, d = index.query(q)
        assert idx_b[k] == i
        assert dist_b[k] == d


def test_duplicate_points_tie_breaks_to_lowest_index():
    pts = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    index = NeighborIndex(pts)
    i, d = index.query([1.0, 1.0, 1.0])
    assert (i, d) == (0, 0.0)
    idx_b, _ = index.query_batch(np.array([[1.0, 1.0, 1.0]]))
    assert idx_b[0] == 0


def test_symmetric_tie_goes_to_lowest_index():
    # Query equidistant from two stored points.
    pts = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    index = NeighborIndex(pts)
    i, d = index.query([0.0, 0.0, 0.0])
    assert (i, d) == (0, 1.0)


def test_accepts_point_set_wrapper(rng):
    cloud = PointSet(rng.normal(size=(10, 3)))
    index = NeighborIndex(cloud)
    assert len(index) == 10
    np.testing.assert_array_equal(index.points, cloud.points)


def test_rejects_bad_inputs():
    with pytest.raises(EmptyInputError):
        NeighborIndex(np.zeros((0, 3)))
    with pytest.raises(DimensionError):
        NeighborIndex(np.zeros((4, 2)))
    index = NeighborIndex(np.zeros((2, 3)))
    with pytest.raises(DimensionError):
        index.query([1.0, 2.0])
    with pytest.raises(DimensionError):
        index.query_batch(np.zeros((3, 2)))


@given(
    n=st.integers(1, 40),
    m=st.integers(1, 20),
    seed=st.integers(0, 2**31 - 1),
    grid=st.booleans(),
)
@settings(max_examples=60, deadline=None)
def test_property_exact_agreement_with_brute_force(n, m, seed, grid):
    rng = np.random.default_rng(seed)
    if grid:
        # Integer lattice points force many exact distance ties.
        pts = rng.integers(-2, 3, size=(n, 3)).astype(float)
        queries = rng.integers(-2, 3, size=(m, 3)).astype(float)
    else:
        pts = rng.normal(size=(n, 3))
        queries = rng.normal(size=(m, 3))
    index = NeighborIndex(pts)
    idx_b, dist_b = index.query_batch(queries)
    for k, q in enumerate(queries):
        bi, bd = _brute(pts, q)
        assert index.query(q) == (bi, bd)
        assert idx_b[k] == bi
        assert dist_b[k] == bd
