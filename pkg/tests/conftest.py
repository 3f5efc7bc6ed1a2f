"""Shared fixtures and helpers for the pointreg test suite."""

from __future__ import annotations

import numpy as np
import pytest

from pointreg import PointSet
from pointreg.fptnet import FptArchitecture


@pytest.fixture
def rng():
    return np.random.default_rng(20260825)


@pytest.fixture
def tiny_arch():
    """Reduced-width network with the full fixed topology, for fast tests."""
    return FptArchitecture(
        embed_a=(8, 8),
        embed_b=(8, 16, 32),
        tnet_mlp=(8, 16, 32),
        tnet_fc=(16, 8),
        transformer=(32, 16, 8, 8, 8, 3),
    )


@pytest.fixture
def small_cloud(rng):
    return PointSet(rng.normal(size=(20, 3)), "source", "normalized")


def finite_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array.

    ``f`` must not retain references to ``x``; the array is perturbed
    in place and restored.
    """
    grad = np.empty_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        hi = f()
        flat[k] = orig - h
        lo = f()
        flat[k] = orig
        gflat[k] = (hi - lo) / (2.0 * h)
    return grad


def norm_relative_error(measured: np.ndarray, expected: np.ndarray) -> float:
    """Vector-norm relative disagreement between two gradient arrays."""
    scale = max(np.linalg.norm(measured), np.linalg.norm(expected))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(measured - expected) / scale)
