"""Unsupervised training of the free point transformer.

The objective is the two-way squared Chamfer loss between the displaced
source and the target — no correspondences, no ground-truth transforms.

Two corpus styles are accepted:

* single clouds — each is normalized and a misaligned copy is
  manufactured on the fly (:func:`pointreg.pipeline.augment_pair`);
  used for pre-training on a shape family.
* (source, target) pairs — used as-is after normalization, typically
  with augmentation disabled; used for fine-tuning on a target cohort.

Runs are deterministic per seed: batch order, augmentation draws and
parameter updates reproduce bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import TrainingDivergedError, UnitMismatchError
from .fptnet import (
    FptArchitecture,
    FptParameters,
    forward_displacements,
    registration_shift,
)
from .geometry import PointSet
from .pipeline import AugmentConfig, augment_pair, normalize_to_unit_box
from . import tensor as T
from .tensor import Tensor

__all__ = ["TrainConfig", "TrainResult", "Adam", "train", "pair_loss"]


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation and augmentation settings.

    ``learning_rate`` may be zero, in which case steps are exact no-ops
    (useful for dry runs).  ``augment=None`` disables augmentation:
    single clouds then pair with themselves and tuples are used verbatim.
    ``max_steps`` caps total optimiser steps across epochs.
    """

    minibatch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 1
    max_steps: int | None = None
    points_per_set: int = 2048
    rng_seed: int = 0
    augment: AugmentConfig | None = AugmentConfig()

    def __post_init__(self):
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be at least 1 when given")
        if self.points_per_set < 1:
            raise ValueError("points_per_set must be at least 1")


@dataclass(frozen=True, eq=False)
class TrainResult:
    """Final parameters plus per-step and per-epoch loss traces."""

    params: FptParameters
    step_losses: tuple[tuple[int, float], ...]
    epoch_losses: tuple[tuple[int, float], ...]


class Adam:
    """Standard Adam with bias correction, keyed by parameter name.

    Each step produces fresh parameter tensors (the previous ones stay
    immutable with their gradients), so no explicit gradient zeroing is
    needed between steps.
    """

    def __init__(self, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(epsilon)
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: FptParameters) -> FptParameters:
        self.step_count += 1
        correct1 = 1.0 - self.beta1**self.step_count
        correct2 = 1.0 - self.beta2**self.step_count
        new_tensors: dict[str, Tensor] = {}
        for name, p in params.tensors.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self._m.get(name)
            v = self._v.get(name)
            m = (1.0 - self.beta1) * grad if m is None else self.beta1 * m + (1.0 - self.beta1) * grad
            v = (1.0 - self.beta2) * grad**2 if v is None else self.beta2 * v + (1.0 - self.beta2) * grad**2
            self._m[name] = m
            self._v[name] = v
            update = (m / correct1) / (np.sqrt(v / correct2) + self.eps)
            new_tensors[name] = Tensor(p.data - self.lr * update, requires_grad=True)
        return FptParameters(params.arch, new_tensors)


# ---------------------------------------------------------------------------
# loss construction


def pair_loss(
    params: FptParameters, source: PointSet, target: PointSet, cache: dict | None = None
) -> Tensor:
    """Differentiable two-way squared Chamfer loss for one pair.

    The source is shifted onto the target's centroid before encoding
    (:func:`pointreg.fptnet.registration_shift`), matching the inference
    operator; the network's parameters see only the residual problem.
    Nearest-neighbour correspondences are chosen outside the graph (they
    are piecewise constant); gradients flow through the chosen pair
    distances in both directions.
    """
    shift = registration_shift(source.points, target.points)
    src = Tensor(source.points + shift)
    disp, _ = forward_displacements(params, src, Tensor(target.points), cache)
    moved = T.add(src, disp)

    sq = cdist(moved.data, target.points, "sqeuclidean")
    nearest_of_moved = sq.argmin(axis=1)
    nearest_of_target = sq.argmin(axis=0)

    fwd = T.sub(moved, target.points[nearest_of_moved])
    loss_fwd = T.mul(T.sum_all(T.mul(fwd, fwd)), 1.0 / moved.data.shape[0])
    picked = T.gather_rows(moved, nearest_of_target)
    bwd = T.sub(picked, target.points)
    loss_bwd = T.mul(T.sum_all(T.mul(bwd, bwd)), 1.0 / target.points.shape[0])
    return T.add(loss_fwd, loss_bwd)


def _subsample(p: PointSet, limit: int, rng: np.random.Generator) -> PointSet:
    if len(p) <= limit:
        return p
    keep = rng.choice(len(p), size=limit, replace=False)
    return PointSet(p.points[np.sort(keep)], p.frame, p.unit)


def _as_pair(
    item, cfg: TrainConfig, rng: np.random.Generator
) -> tuple[PointSet, PointSet]:
    """Turn a corpus item into a normalized (source, target) pair.

    Explicit pairs share one frame, so both sides are mapped through the
    source's normalization; this keeps their relative pose intact and
    works even when the target covers only part of the surface.
    """
    if isinstance(item, PointSet):
        cloud = _subsample(item, cfg.points_per_set, rng)
        normalized, _ = normalize_to_unit_box(cloud)
        if cfg.augment is None:
            return normalized, normalized
        target, source, _ = augment_pair(
            normalized, cfg.augment, seed=int(rng.integers(2**63))
        )
        return source, target
    source, target = item
    if source.unit != target.unit:
        raise UnitMismatchError(
            f"pair units differ: source {source.unit!r} vs target {target.unit!r}"
        )
    source = _subsample(source, cfg.points_per_set, rng)
    target = _subsample(target, cfg.points_per_set, rng)
    if source.unit != "normalized":
        source, record = normalize_to_unit_box(source)
        target = PointSet(record.normalize(target.points), "target", "normalized")
    return source, target


def train(
    corpus,
    cfg: TrainConfig = TrainConfig(),
    init: FptParameters | None = None,
    arch: FptArchitecture | None = None,
) -> TrainResult:
    """Optimise network parameters over a corpus.

    Args:
        corpus: sequence of PointSet (self-supervised pre-training) or
            of (source, target) PointSet pairs (fine-tuning).
        cfg: optimisation settings.
        init: starting parameters; a fresh identity-initialised network
            when omitted.  Training starts exactly there — the first
            recorded loss is the loss of ``init`` on the first batch.
        arch: architecture for the fresh network when ``init`` is None.

    Raises:
        TrainingDivergedError: a non-finite loss aborts the run; the
            exception carries the last parameters with a finite loss.
    """
    items = list(corpus)
    if not items:
        raise ValueError("training corpus is empty")
    if init is not None:
        # Work on a copy: the caller's tensors must stay untouched (no
        # gradient buffers), so one parameter set can seed several runs.
        params = FptParameters(
            init.arch,
            {name: Tensor(t.data.copy(), requires_grad=True) for name, t in init.tensors.items()},
        )
    else:
        params = FptParameters.fresh(arch or FptArchitecture(), seed=cfg.rng_seed)
    adam = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    rng = np.random.default_rng(cfg.rng_seed)

    step = 0
    last_good = params
    step_losses: list[tuple[int, float]] = []
    epoch_losses: list[tuple[int, float]] = []
    stop = False
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(items))
        epoch_values: list[float] = []
        for start in range(0, len(items), cfg.minibatch_size):
            batch = [items[i] for i in order[start : start + cfg.minibatch_size]]
            cache: dict = {}
            total = None
            for item in batch:
                source, target = _as_pair(item, cfg, rng)
                loss = pair_loss(params, source, target, cache)
                total = loss if total is None else T.add(total, loss)
            total = T.mul(total, 1.0 / len(batch))
            value = float(total.data)
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"training loss became non-finite ({value}) at step {step}",
                    last_good=last_good,
                    step=step,
                )
            last_good = params
            step_losses.append((step, value))
            epoch_values.append(value)
            total.backward()
            params = adam.step(params)
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                stop = True
                break
        if epoch_values:
            epoch_losses.append((epoch, float(np.mean(epoch_values))))
        if stop:
            break
    return TrainResult(
        params=params,
        step_losses=tuple(step_losses),
        epoch_losses=tuple(epoch_losses),
    )
