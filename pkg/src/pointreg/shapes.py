"""Synthetic anatomical-scale point-cloud families.

Two families:

* ``ellipsoid`` — a sphere scaled by semi-axes.
* ``blob`` — a gland-like shape: a sphere whose radius is modulated by a
  low-order smooth perturbation of the direction, optionally stretched
  anisotropically.  Zero perturbation amplitude reproduces the sphere.

Shapes are sampled as surface point clouds.  Deterministic per seed.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .geometry import PointSet

__all__ = ["synth_ellipsoid", "synth_blob", "synth_shape", "SHAPE_FAMILIES"]

SHAPE_FAMILIES = ("ellipsoid", "blob")


def _unit_directions(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform directions on the unit sphere."""
    v = rng.normal(size=(n, 3))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    # Resample the (measure-zero) degenerate draws.
    while (norms == 0.0).any():
        bad = norms[:, 0] == 0.0
        v[bad] = rng.normal(size=(int(bad.sum()), 3))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / norms


def synth_ellipsoid(
    n: int,
    semi_axes=(1.0, 1.0, 1.0),
    seed: int = 0,
    *,
    frame: str = "source",
    unit: str = "normalized",
) -> PointSet:
    """Sample ``n`` surface points of an origin-centred ellipsoid."""
    if n < 1:
        raise ParameterError("point count must be at least 1")
    axes = np.asarray(semi_axes, dtype=np.float64).reshape(-1)
    if axes.shape != (3,) or (axes <= 0).any():
        raise ParameterError(f"semi-axes must be 3 positive values, got {semi_axes!r}")
    rng = np.random.default_rng(seed)
    return PointSet(_unit_directions(n, rng) * axes, frame, unit)


def synth_blob(
    n: int,
    seed: int = 0,
    *,
    base_radius: float = 1.0,
    amplitude: float = 0.15,
    order: int = 3,
    stretch=(1.0, 1.0, 1.0),
    direction_seed: int | None = None,
    frame: str = "source",
    unit: str = "normalized",
) -> PointSet:
    """Sample a gland-like blob: radius 1 + amplitude·s(direction).

    ``s`` is a fixed-seed sum of ``order`` smooth cosine waves of
    direction with unit-bounded amplitude, so the radius stays within
    base_radius·(1 ± amplitude).  ``stretch`` scales the axes afterwards
    for prolate/oblate variants.  ``direction_seed`` draws the sample
    directions from a separate stream: the surface (a function of
    ``seed`` alone) stays identical while the points on it are
    independent — useful for resampled targets and landmarks.
    """
    if n < 1:
        raise ParameterError("point count must be at least 1")
    if base_radius <= 0:
        raise ParameterError(f"base_radius must be positive, got {base_radius}")
    if not 0.0 <= amplitude < 1.0:
        raise ParameterError(f"amplitude must lie in [0, 1), got {amplitude}")
    if order < 1:
        raise ParameterError(f"order must be at least 1, got {order}")
    stretch_arr = np.asarray(stretch, dtype=np.float64).reshape(-1)
    if stretch_arr.shape != (3,) or (stretch_arr <= 0).any():
        raise ParameterError(f"stretch must be 3 positive values, got {stretch!r}")

    rng = np.random.default_rng(seed)
    # Perturbation harmonics are drawn first so the underlying surface is
    # a function of the seed alone, independent of n.
    wave_dirs = _unit_directions(order, rng)
    freqs = rng.integers(1, order + 1, size=order)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=order)

    direction_rng = rng if direction_seed is None else np.random.default_rng(direction_seed)
    directions = _unit_directions(n, direction_rng)
    modulation = np.zeros(n)
    for k in range(order):
        modulation += np.cos(freqs[k] * np.pi * directions @ wave_dirs[k] + phases[k])
    modulation /= order  # bounded in [-1, 1]
    radii = base_radius * (1.0 + amplitude * modulation)
    return PointSet(directions * radii[:, None] * stretch_arr, frame, unit)


def synth_shape(
    family: str, n: int, seed: int = 0, *, frame: str = "source", unit: str = "normalized", **params
) -> PointSet:
    """Dispatch to a named synthetic family ('ellipsoid' or 'blob')."""
    if family == "ellipsoid":
        return synth_ellipsoid(n, seed=seed, frame=frame, unit=unit, **params)
    if family == "blob":
        return synth_blob(n, seed=seed, frame=frame, unit=unit, **params)
    raise ParameterError(
        f"unknown shape family {family!r}; expected one of {SHAPE_FAMILIES}"
    )
