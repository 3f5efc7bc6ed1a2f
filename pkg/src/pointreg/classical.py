"""Classical point-set registration baselines.

Three methods, all deterministic:

* :func:`center_align` — translate the source so centroids coincide.
* :func:`icp_register` — rigid iterative closest point: alternate exact
  nearest-neighbour correspondence with a reflection-guarded SVD
  (Kabsch) solve, starting from center alignment.
* :func:`cpd_nonrigid_register` — non-rigid coherent point drift: EM
  over a Gaussian mixture whose centroids move along a Gaussian-kernel
  displacement field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import SolveError, UnitMismatchError
from .geometry import PointSet, RigidTransform
from .kdtree import NeighborIndex

__all__ = [
    "IcpConfig",
    "IcpResult",
    "CpdConfig",
    "CpdIteration",
    "CpdResult",
    "center_align",
    "icp_register",
    "cpd_nonrigid_register",
]


def _check_units(source: PointSet, target: PointSet, op: str) -> None:
    if source.unit != target.unit:
        raise UnitMismatchError(
            f"{op} requires matching units, got {source.unit!r} and {target.unit!r}"
        )


def center_align(source: PointSet, target: PointSet) -> PointSet:
    """Translate the source so its centroid matches the target's."""
    _check_units(source, target, "center_align")
    shift = target.centroid - source.centroid
    return PointSet(source.points + shift, "transformed", source.unit)


# ---------------------------------------------------------------------------
# iterative closest point


@dataclass(frozen=True)
class IcpConfig:
    """Iteration budget and stopping tolerance for ICP."""

    max_iterations: int = 25
    convergence_tol: float = 1e-8

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be non-negative")


@dataclass(frozen=True, eq=False)
class IcpResult:
    """Recovered rigid transform, the transformed source, and the
    per-iteration mean-squared correspondence error (non-increasing)."""

    transform: RigidTransform
    transformed: PointSet
    trace: tuple[float, ...]


def _kabsch(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rigid fit of paired points, guarded against
    reflections: if the optimal orthogonal matrix has det −1, the last
    singular direction is flipped to stay in SO(3)."""
    centroid_s = source.mean(axis=0)
    centroid_t = target.mean(axis=0)
    h = (source - centroid_s).T @ (target - centroid_t)
    u, _, vt = np.linalg.svd(h)
    rotation = vt.T @ u.T
    if np.linalg.det(rotation) < 0:
        vt[-1, :] *= -1.0
        rotation = vt.T @ u.T
    translation = centroid_t - rotation @ centroid_s
    return rotation, translation


def icp_register(
    source: PointSet, target: PointSet, cfg: IcpConfig = IcpConfig()
) -> IcpResult:
    """Rigid ICP from a center-aligned start.

    Each iteration corresponds every transformed source point to its
    exact nearest target point, then re-solves the rigid transform from
    the original source to those correspondences.  Stops when the
    mean-squared correspondence error changes by less than
    ``convergence_tol`` or after ``max_iterations`` updates.
    """
    _check_units(source, target, "icp_register")
    src = source.points
    index = NeighborIndex(target)

    rotation = np.eye(3)
    translation = target.centroid - source.centroid
    moved = src + translation
    idx, dist = index.query_batch(moved)
    trace = [float(np.mean(dist * dist))]

    for _ in range(cfg.max_iterations):
        rotation, translation = _kabsch(src, index.points[idx])
        moved = src @ rotation.T + translation
        idx, dist = index.query_batch(moved)
        trace.append(float(np.mean(dist * dist)))
        if abs(trace[-2] - trace[-1]) < cfg.convergence_tol:
            break

    return IcpResult(
        transform=RigidTransform(rotation, translation),
        transformed=PointSet(moved, "transformed", source.unit),
        trace=tuple(trace),
    )


# ---------------------------------------------------------------------------
# coherent point drift


@dataclass(frozen=True)
class CpdConfig:
    """Non-rigid CPD settings.

    ``beta`` is the Gaussian kernel width of the displacement field,
    ``lam`` the coherence regularisation weight, and ``weight`` the
    uniform-outlier mixture weight in [0, 1).  Iteration stops when the
    mixture variance changes by less than ``sigma2_tol``.
    """

    weight: float = 0.0
    max_iterations: int = 150
    beta: float = 2.0
    lam: float = 2.0
    sigma2_tol: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.weight < 1.0:
            raise ValueError("weight must lie in [0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.beta <= 0 or self.lam <= 0:
            raise ValueError("beta and lam must be positive")
        if self.sigma2_tol <= 0:
            raise ValueError("sigma2_tol must be positive")


@dataclass(frozen=True)
class CpdIteration:
    """One EM iteration: mixture variance and negative log-likelihood
    (including the coherence penalty) evaluated before the update."""

    sigma2: float
    nll: float


@dataclass(frozen=True, eq=False)
class CpdResult:
    """Displacement field result of non-rigid CPD.

    ``displacements`` moves each source point onto the transformed set.
    The continuous field can be evaluated anywhere via :meth:`displace`,
    e.g. to carry landmarks along with the registration.
    """

    displacements: np.ndarray
    transformed: PointSet
    trace: tuple[CpdIteration, ...]
    _controls: np.ndarray = field(repr=False)
    _weights: np.ndarray = field(repr=False)
    _beta: float = field(repr=False)

    def displace(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the learned displacement field at raw coordinates."""
        pts = np.asarray(points, dtype=np.float64)
        kernel = np.exp(
            -cdist(pts, self._controls, "sqeuclidean") / (2.0 * self._beta**2)
        )
        return kernel @ self._weights


def cpd_nonrigid_register(
    source: PointSet, target: PointSet, cfg: CpdConfig = CpdConfig()
) -> CpdResult:
    """Non-rigid coherent point drift of ``source`` onto ``target``.

    The source points are Gaussian mixture centroids displaced by
    ``G @ W`` where ``G`` is the Gaussian kernel over the original source
    points.  EM alternates soft correspondence (E-step) with a
    regularised linear solve for ``W`` and a variance update (M-step).
    The recorded objective is non-increasing across iterations.
    """
    _check_units(source, target, "cpd_nonrigid_register")
    moving = source.points  # mixture centroids (M, 3)
    fixed = target.points  # data points (N, 3)
    n_moving, dims = moving.shape
    n_fixed = fixed.shape[0]

    gram = np.exp(-cdist(moving, moving, "sqeuclidean") / (2.0 * cfg.beta**2))
    weights = np.zeros((n_moving, dims))
    moved = moving.copy()
    sigma2 = cdist(moving, fixed, "sqeuclidean").sum() / (dims * n_moving * n_fixed)
    eps = np.finfo(np.float64).eps

    trace: list[CpdIteration] = []
    for iteration in range(cfg.max_iterations):
        # E-step: posterior probability of each centroid per data point.
        sq = cdist(moved, fixed, "sqeuclidean")
        kernel = np.exp(-sq / (2.0 * sigma2))
        den = kernel.sum(axis=0)
        den[den == 0.0] = eps
        if cfg.weight > 0.0:
            den = den + (
                (2.0 * math.pi * sigma2) ** (dims / 2.0)
                * cfg.weight
                / (1.0 - cfg.weight)
                * n_moving
                / n_fixed
            )
        nll = (
            -np.log(den).sum()
            - n_fixed * math.log((1.0 - cfg.weight) / n_moving)
            + n_fixed * dims / 2.0 * math.log(2.0 * math.pi * sigma2)
            + cfg.lam / 2.0 * float(np.trace(weights.T @ gram @ weights))
        )
        trace.append(CpdIteration(sigma2=float(sigma2), nll=float(nll)))
        posterior = kernel / den  # (M, N)

        # M-step: solve for kernel weights, move centroids, update variance.
        post_moving = posterior.sum(axis=1)
        post_fixed = posterior.sum(axis=0)
        mass = post_moving.sum()
        system = gram * post_moving[:, None]
        system[np.diag_indices_from(system)] += cfg.lam * sigma2
        rhs = posterior @ fixed - post_moving[:, None] * moving
        try:
            weights = np.linalg.solve(system, rhs)
        except np.linalg.LinAlgError as exc:
            raise SolveError(
                f"CPD M-step solve failed at iteration {iteration} "
                f"(sigma2={sigma2:.3e}); the regularisation floor collapsed"
            ) from exc
        moved = moving + gram @ weights

        fixed_sq = float((post_fixed * (fixed * fixed).sum(axis=1)).sum())
        cross = float((moved * (posterior @ fixed)).sum())
        moved_sq = float((post_moving * (moved * moved).sum(axis=1)).sum())
        sigma2_new = (fixed_sq - 2.0 * cross + moved_sq) / (mass * dims)
        if sigma2_new <= 0.0:
            # Perfect overlap: park the variance on a tiny floor and stop.
            sigma2 = cfg.sigma2_tol / 10.0
            break
        change = abs(sigma2 - sigma2_new)
        sigma2 = sigma2_new
        if change < cfg.sigma2_tol:
            break

    return CpdResult(
        displacements=moved - moving,
        transformed=PointSet(moved, "transformed", source.unit),
        trace=tuple(trace),
        _controls=moving,
        _weights=weights,
        _beta=cfg.beta,
    )
