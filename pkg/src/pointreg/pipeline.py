"""Data preparation: normalization, pair augmentation, sparse-target
simulation, and dataset splitting.

Training pairs are manufactured from a single cloud: the normalized
cloud is the target and a smoothly deformed, rotated, displaced copy is
the source.  The exact generating transform is returned as an
:class:`AugmentRecord` so ground-truth correspondences (and landmarks)
can be reproduced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateGeometryError,
    UnitMismatchError,
    VisibilityError,
)
from .geometry import (
    PointSet,
    TpsField,
    fit_tps,
    rotation_from_euler,
    tps_control_grid,
)

__all__ = [
    "NormalizationRecord",
    "normalize_to_unit_box",
    "AugmentConfig",
    "AugmentRecord",
    "augment_pair",
    "SparseSliceConfig",
    "biplane_sparse",
    "DatasetSplit",
    "split_dataset",
]


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True, eq=False)
class NormalizationRecord:
    """Invertible record of an isotropic normalize-to-[-1, 1] mapping."""

    offset: np.ndarray  # original centroid
    scale: float  # max |coordinate| after centring

    def normalize(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.offset) / self.scale

    def denormalize(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + self.offset


def normalize_to_unit_box(p: PointSet) -> tuple[PointSet, NormalizationRecord]:
    """Centre the centroid at the origin and scale isotropically so all
    coordinates lie in [-1, 1], with at least one touching ±1.

    Returns the normalized set and the invertible record.  A cloud with
    zero spatial extent cannot be normalized.
    """
    centroid = p.points.mean(axis=0)
    centred = p.points - centroid
    scale = float(np.abs(centred).max())
    if scale == 0.0:
        raise DegenerateGeometryError(
            "cannot normalize a point set with zero spatial extent"
        )
    record = NormalizationRecord(offset=centroid, scale=scale)
    return PointSet(centred / scale, p.frame, "normalized"), record


# ---------------------------------------------------------------------------
# pair augmentation


@dataclass(frozen=True)
class AugmentConfig:
    """Ranges for manufacturing a misaligned moving source from a fixed
    target cloud.

    Applied in order: thin-plate-spline deformation (control lattice
    shifted by Gaussian noise of ``tps_sigma``), rotation (uniform
    per-axis Euler angles up to ``rotation_max_deg``), then a uniform
    displacement up to ``displacement_max`` per axis.
    """

    rotation_max_deg: float = 45.0
    displacement_max: float = 1.0
    tps_sigma: float = 0.1
    tps_grid_n: int = 3
    tps_grid_bounds: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if self.rotation_max_deg < 0 or self.displacement_max < 0 or self.tps_sigma < 0:
            raise ValueError("augmentation ranges must be non-negative")
        if self.tps_grid_n < 2:
            raise ValueError("tps_grid_n must be at least 2")


@dataclass(frozen=True, eq=False)
class AugmentRecord:
    """The exact generating transform of an augmented pair.

    Applying :meth:`apply` to the target coordinates reproduces the
    source coordinates, and can likewise carry landmarks or any other
    points through the same ground-truth motion.
    """

    tps: TpsField
    rotation: np.ndarray  # (3, 3)
    displacement: np.ndarray  # (3,)

    def apply(self, points: np.ndarray) -> np.ndarray:
        deformed = self.tps.evaluate(np.asarray(points, dtype=np.float64))
        return deformed @ self.rotation.T + self.displacement


def augment_pair(
    p: PointSet, cfg: AugmentConfig, seed: int
) -> tuple[PointSet, PointSet, AugmentRecord]:
    """Manufacture a (target, source) training pair from one normalized
    cloud: the fixed target is the input itself, the moving source is a
    TPS-deformed, rotated, displaced copy.  Deterministic per seed;
    zero-magnitude ranges reproduce the input exactly.
    """
    if p.unit != "normalized":
        raise UnitMismatchError(
            f"augment_pair expects a normalized cloud, got unit {p.unit!r}"
        )
    rng = np.random.default_rng(seed)
    controls = tps_control_grid(cfg.tps_grid_n, cfg.tps_grid_bounds)
    shifts = rng.normal(0.0, cfg.tps_sigma, size=controls.shape) if cfg.tps_sigma > 0 else np.zeros(controls.shape)
    field = fit_tps(controls, controls + shifts)
    max_rad = math.radians(cfg.rotation_max_deg)
    angles = rng.uniform(-max_rad, max_rad, size=3)
    rotation = rotation_from_euler(*angles)
    displacement = rng.uniform(-cfg.displacement_max, cfg.displacement_max, size=3)
    record = AugmentRecord(tps=field, rotation=rotation, displacement=displacement)
    target = PointSet(p.points, "target", "normalized")
    source = PointSet(record.apply(p.points), "source", "normalized")
    return target, source, record


# ---------------------------------------------------------------------------
# sparse biplane visibility


@dataclass(frozen=True, eq=False)
class SparseSliceConfig:
    """Biplane acquisition footprint: two slabs of half-thickness ``tau``
    around intersecting planes, with an optional angular sector about
    the plane intersection axis to mimic partial visibility.
    """

    plane_points: np.ndarray = None  # (2, 3) a point on each plane
    plane_normals: np.ndarray = None  # (2, 3) unit-ish normals
    tau: float = 0.05
    sector_half_angle_deg: float | None = None

    def __post_init__(self):
        pts = self.plane_points if self.plane_points is not None else np.zeros((2, 3))
        nrm = (
            self.plane_normals
            if self.plane_normals is not None
            else np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        )
        pts = np.asarray(pts, dtype=np.float64).reshape(2, 3)
        nrm = np.asarray(nrm, dtype=np.float64).reshape(2, 3)
        lengths = np.linalg.norm(nrm, axis=1)
        if (lengths == 0.0).any():
            raise ValueError("plane normals must be non-zero")
        nrm = nrm / lengths[:, None]
        cos = abs(float(nrm[0] @ nrm[1]))
        if cos > 1.0 - 1e-9:
            raise ValueError("plane normals must not be parallel")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.sector_half_angle_deg is not None and not (
            0.0 < self.sector_half_angle_deg <= 180.0
        ):
            raise ValueError("sector_half_angle_deg must lie in (0, 180]")
        pts, nrm = pts.copy(), nrm.copy()
        pts.flags.writeable = False
        nrm.flags.writeable = False
        object.__setattr__(self, "plane_points", pts)
        object.__setattr__(self, "plane_normals", nrm)


def biplane_sparse(
    p: PointSet, cfg: SparseSliceConfig = SparseSliceConfig()
) -> tuple[PointSet, np.ndarray]:
    """Select the subset of points visible to a biplane acquisition.

    A point is kept when it lies within ``tau`` of either plane (and,
    when a sector is configured, within the angular sector about the
    planes' intersection axis).  Returns the retained points — identical
    coordinates, original order — plus their indices into ``p`` so
    landmark bookkeeping can follow the selection.
    """
    pts = p.points
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    corners = np.array(
        [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
    )

    mask = np.zeros(len(p), dtype=bool)
    for plane_point, normal in zip(cfg.plane_points, cfg.plane_normals):
        corner_d = (corners - plane_point) @ normal
        if corner_d.min() > cfg.tau or corner_d.max() < -cfg.tau:
            raise VisibilityError(
                "a biplane slab lies entirely outside the cloud's bounding box"
            )
        mask |= np.abs((pts - plane_point) @ normal) <= cfg.tau

    if cfg.sector_half_angle_deg is not None:
        # Sector about the planes' intersection axis, opening toward +reference.
        axis = np.cross(cfg.plane_normals[0], cfg.plane_normals[1])
        axis = axis / np.linalg.norm(axis)
        origin = cfg.plane_points.mean(axis=0)
        rel = pts - origin
        in_plane = rel - np.outer(rel @ axis, axis)
        norms = np.linalg.norm(in_plane, axis=1)
        reference = cfg.plane_normals[0] + cfg.plane_normals[1]
        reference = reference - (reference @ axis) * axis
        reference = reference / np.linalg.norm(reference)
        with np.errstate(invalid="ignore"):
            cosang = np.where(norms > 0, in_plane @ reference / np.where(norms > 0, norms, 1.0), 1.0)
        mask &= cosang >= math.cos(math.radians(cfg.sector_half_angle_deg))

    indices = np.flatnonzero(mask)
    if indices.size == 0:
        raise VisibilityError(
            f"no points fall within the biplane slabs (tau={cfg.tau}); "
            "increase tau or move the planes"
        )
    return PointSet(pts[indices], p.frame, p.unit), indices


# ---------------------------------------------------------------------------
# dataset splitting


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint, exhaustive train/test partition of case identifiers."""

    train_ids: tuple
    test_ids: tuple
    seed: int


def split_dataset(
    ids, fraction: float, seed: int, subjects: dict | None = None
) -> DatasetSplit:
    """Deterministically split case ids into train/test.

    When ``subjects`` maps case ids to subject identifiers, all cases of
    one subject land on the same side (no subject leakage).  ``fraction``
    is the approximate train share of subjects (or cases).
    """
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("case ids must be unique")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if len(ids) < 2:
        raise ValueError("need at least 2 cases to split")

    if subjects is None:
        groups = {i: (i,) for i in ids}
    else:
        groups = {}
        for case in ids:
            groups.setdefault(subjects[case], []).append(case)
    keys = sorted(groups, key=str)
    if len(keys) < 2:
        raise ValueError("need at least 2 subjects to split without leakage")
    rng = np.random.default_rng(seed)
    order = [keys[i] for i in rng.permutation(len(keys))]
    n_train = int(round(fraction * len(keys)))
    n_train = min(max(n_train, 1), len(keys) - 1)
    train_keys = set(order[:n_train])

    train = tuple(i for i in ids if (i if subjects is None else subjects[i]) in train_keys)
    test = tuple(i for i in ids if i not in set(train))
    return DatasetSplit(train_ids=train, test_ids=test, seed=seed)
