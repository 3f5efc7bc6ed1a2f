"""Core geometric types and measures for 3-D point-set registration.

Provides the :class:`PointSet` / :class:`LandmarkPairs` containers, rigid
and thin-plate-spline transforms, and the distance measures used to score
registrations (two-way Chamfer, Hausdorff, landmark RMS error).

Distances are reported two ways and callers must be explicit:
:func:`chamfer_distance` averages plain Euclidean nearest-neighbour
distances in both directions and is the number quoted in reports;
:func:`chamfer_squared` averages squared distances and is the training
objective.  Both are summed over the two directions.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    DegenerateGeometryError,
    DimensionError,
    EmptyInputError,
    InvalidRotationError,
    PairingError,
    UnitMismatchError,
)

__all__ = [
    "FRAMES",
    "UNITS",
    "PointSet",
    "LandmarkPairs",
    "RigidTransform",
    "TpsField",
    "chamfer_distance",
    "chamfer_squared",
    "hausdorff_distance",
    "target_registration_error",
    "rotation_from_euler",
    "fit_tps",
    "apply_rigid",
    "apply_tps",
    "tps_control_grid",
]

FRAMES = ("source", "target", "transformed")
UNITS = ("normalized", "mm")

# Orthonormality slack for rotation matrices.
_ROTATION_TOL = 1e-9
# Residual slack for thin-plate-spline interpolation and side conditions.
_TPS_TOL = 1e-8


def _validate_points(points, what: str) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DimensionError(f"{what} must have shape (N, 3), got {arr.shape}")
    if arr.shape[0] < 1:
        raise EmptyInputError(f"{what} must contain at least one point")
    if not np.isfinite(arr).all():
        raise DimensionError(f"{what} contains non-finite coordinates")
    return arr


@dataclass(frozen=True, eq=False)
class PointSet:
    """An (N, 3) cloud of 64-bit float coordinates with frame and unit tags.

    The coordinate array is made read-only on construction; derive new
    sets instead of mutating.  ``frame`` records the cloud's role
    (source / target / transformed) and ``unit`` whether coordinates are
    normalized or in millimetres.
    """

    points: np.ndarray
    frame: str = "source"
    unit: str = "normalized"

    def __post_init__(self):
        arr = _validate_points(self.points, "PointSet")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "points", arr)
        if self.frame not in FRAMES:
            raise ValueError(f"frame must be one of {FRAMES}, got {self.frame!r}")
        if self.unit not in UNITS:
            raise ValueError(f"unit must be one of {UNITS}, got {self.unit!r}")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def with_points(self, points, frame: str | None = None) -> "PointSet":
        """A new set with replaced coordinates, keeping tags by default."""
        return PointSet(points, frame or self.frame, self.unit)


@dataclass(frozen=True, eq=False)
class LandmarkPairs:
    """Corresponding landmark coordinates in two frames, paired by row."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        src = _validate_points(self.source, "landmark source")
        tgt = _validate_points(self.target, "landmark target")
        if src.shape[0] != tgt.shape[0]:
            raise PairingError(
                f"landmark counts differ: {src.shape[0]} source vs {tgt.shape[0]} target"
            )
        src, tgt = src.copy(), tgt.copy()
        src.flags.writeable = False
        tgt.flags.writeable = False
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", tgt)

    def __len__(self) -> int:
        return self.source.shape[0]


# ---------------------------------------------------------------------------
# rigid transforms


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion x -> R x + t with an orthonormality guarantee."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise DimensionError(f"rotation must be 3x3, got {rot.shape}")
        if not np.isfinite(rot).all() or not np.isfinite(tr).all():
            raise InvalidRotationError("rigid transform contains non-finite values")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        det = np.linalg.det(rot)
        if err > _ROTATION_TOL or abs(det - 1.0) > _ROTATION_TOL:
            raise InvalidRotationError(
                f"rotation is not orthonormal with det +1 "
                f"(orthonormality error {err:.3e}, det {det:.12f})"
            )
        rot, tr = rot.copy(), tr.copy()
        rot.flags.writeable = False
        tr.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """The transform equivalent to applying ``inner`` first, then self."""
        return RigidTransform(
            self.rotation @ inner.rotation,
            self.rotation @ inner.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rot_inv = self.rotation.T
        return RigidTransform(rot_inv, -(rot_inv @ self.translation))


def rotation_from_euler(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation matrix from intrinsic x, y, z axis angles (radians).

    Applied to column vectors as Rz @ Ry @ Rx, i.e. the x rotation acts
    first.
    """
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    rot_x = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    rot_y = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rot_z = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return rot_z @ rot_y @ rot_x


def apply_rigid(transform: RigidTransform, points: PointSet) -> PointSet:
    """Apply a rigid transform to a point set, tagging it transformed."""
    return PointSet(transform.apply(points.points), "transformed", points.unit)


# ---------------------------------------------------------------------------
# distance measures


def _check_units(a: PointSet, b: PointSet, op: str) -> None:
    if a.unit != b.unit:
        raise UnitMismatchError(
            f"{op} requires matching units, got {a.unit!r} and {b.unit!r}"
        )


def _sq_dists(a: PointSet, b: PointSet) -> np.ndarray:
    return cdist(a.points, b.points, "sqeuclidean")


def chamfer_distance(a: PointSet, b: PointSet) -> float:
    """Two-way Chamfer distance: mean Euclidean nearest-neighbour distance
    from a to b plus the mean from b to a.

    Zero exactly when every point of either set coincides with some point
    of the other.  Symmetric in its arguments.
    """
    _check_units(a, b, "chamfer_distance")
    sq = _sq_dists(a, b)
    return float(np.mean(np.sqrt(sq.min(axis=1))) + np.mean(np.sqrt(sq.min(axis=0))))


def chamfer_squared(a: PointSet, b: PointSet) -> float:
    """Two-way squared Chamfer: mean squared nearest-neighbour distance in
    each direction, summed.  This is the training objective; reported
    tables use :func:`chamfer_distance`.
    """
    _check_units(a, b, "chamfer_squared")
    sq = _sq_dists(a, b)
    return float(np.mean(sq.min(axis=1)) + np.mean(sq.min(axis=0)))


def hausdorff_distance(a: PointSet, b: PointSet) -> float:
    """Symmetric Hausdorff distance: the larger of the two directed
    maximum nearest-neighbour distances."""
    _check_units(a, b, "hausdorff_distance")
    sq = _sq_dists(a, b)
    return float(
        max(np.sqrt(sq.min(axis=1)).max(), np.sqrt(sq.min(axis=0)).max())
    )


def target_registration_error(landmarks: LandmarkPairs) -> float:
    """Root-mean-square Euclidean distance over paired landmarks."""
    diff = landmarks.source - landmarks.target
    return float(np.sqrt(np.mean((diff * diff).sum(axis=1))))


# ---------------------------------------------------------------------------
# thin-plate splines


@dataclass(frozen=True, eq=False)
class TpsField:
    """A 3-D thin-plate-spline displacement interpolant.

    Maps x to x + affine·[1, x] + Σ_j w_j U(||x − c_j||) with kernel
    U(r) = r.  The kernel coefficients satisfy the side conditions
    (orthogonality to [1 | controls]), which makes the far field affine.
    """

    control_points: np.ndarray
    control_displacements: np.ndarray
    affine: np.ndarray
    kernel_coeffs: np.ndarray

    def __post_init__(self):
        controls = _validate_points(self.control_points, "TPS control points")
        disp = _validate_points(self.control_displacements, "TPS displacements")
        aff = np.asarray(self.affine, dtype=np.float64)
        coeffs = np.asarray(self.kernel_coeffs, dtype=np.float64)
        k = controls.shape[0]
        if disp.shape[0] != k:
            raise DimensionError(
                f"control displacement count {disp.shape[0]} != control count {k}"
            )
        if aff.shape != (3, 4):
            raise DimensionError(f"TPS affine part must be (3, 4), got {aff.shape}")
        if coeffs.shape != (k, 3):
            raise DimensionError(
                f"TPS kernel coefficients must be ({k}, 3), got {coeffs.shape}"
            )
        side = np.column_stack([np.ones(k), controls]).T @ coeffs
        if np.abs(side).max() > _TPS_TOL:
            raise DegenerateGeometryError(
                f"TPS side conditions violated (max residual {np.abs(side).max():.3e})"
            )
        for name, arr in (
            ("control_points", controls),
            ("control_displacements", disp),
            ("affine", aff),
            ("kernel_coeffs", coeffs),
        ):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Map raw (N, 3) coordinates through the field."""
        pts = np.asarray(points, dtype=np.float64)
        kernel = cdist(pts, self.control_points)  # U(r) = r
        disp = (
            self.affine[:, 0]
            + pts @ self.affine[:, 1:].T
            + kernel @ self.kernel_coeffs
        )
        return pts + disp


def tps_control_grid(n_per_axis: int = 3, bounds: tuple[float, float] = (-1.0, 1.0)) -> np.ndarray:
    """A regular n³ lattice of control points spanning a cube."""
    if n_per_axis < 2:
        raise ValueError("control grid needs at least 2 points per axis")
    axis = np.linspace(bounds[0], bounds[1], n_per_axis)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])


def fit_tps(control_points, displaced_controls) -> TpsField:
    """Fit the exact TPS interpolant sending each control point to its
    displaced position.

    Solves the standard bordered kernel system; the displacement (not the
    absolute position) is interpolated, so zero displacement yields the
    identity field and a pure translation yields that translation
    everywhere.

    Raises:
        DegenerateGeometryError: fewer than 4 controls, coplanar controls,
            or a numerically singular system.
    """
    controls = _validate_points(control_points, "TPS control points")
    displaced = _validate_points(displaced_controls, "TPS displaced controls")
    k = controls.shape[0]
    if displaced.shape[0] != k:
        raise DimensionError(
            f"displaced control count {displaced.shape[0]} != control count {k}"
        )
    if k < 4:
        raise DegenerateGeometryError(f"TPS needs at least 4 control points, got {k}")
    poly = np.column_stack([np.ones(k), controls])  # (K, 4)
    if np.linalg.matrix_rank(poly) < 4:
        raise DegenerateGeometryError(
            "TPS control points are coplanar (or otherwise affinely degenerate)"
        )
    kernel = cdist(controls, controls)  # U(r) = r
    system = np.zeros((k + 4, k + 4))
    system[:k, :k] = kernel
    system[:k, k:] = poly
    system[k:, :k] = poly.T
    rhs = np.zeros((k + 4, 3))
    rhs[:k] = displaced - controls
    try:
        solution = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateGeometryError(f"TPS system is singular: {exc}") from exc
    field = TpsField(
        control_points=controls,
        control_displacements=displaced - controls,
        affine=solution[k:].T,
        kernel_coeffs=solution[:k],
    )
    residual = np.abs(field.evaluate(controls) - displaced).max()
    if residual > _TPS_TOL:
        raise DegenerateGeometryError(
            f"TPS interpolation failed (max control residual {residual:.3e}); "
            "control points are nearly degenerate"
        )
    return field


def apply_tps(field: TpsField, points: PointSet) -> PointSet:
    """Apply a TPS field to a point set, tagging it transformed."""
    return PointSet(field.evaluate(points.points), "transformed", points.unit)
