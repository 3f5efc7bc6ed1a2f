"""The free point transformer network.

Two weight-sharing point-cloud encoders (each: input transform net,
per-point embedding MLP, feature transform net, deeper embedding MLP,
symmetric max-pool) produce one feature vector per cloud.  Their
concatenation — the global feature — conditions a per-point MLP that
maps every source coordinate to a free displacement, with no rigidity or
smoothness constraint.  The final layer starts at zero, so an untrained
network is exactly the identity mapping.

The displacement head consumes [global feature | x, y, z] per point.
Because the global-feature block of its first layer sees the same vector
at every point, that product is computed once per cloud and broadcast
across rows — mathematically identical to materialising the
concatenation, but far cheaper.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import CheckpointShapeError, DimensionError, UnitMismatchError
from .geometry import PointSet
from . import tensor as T
from .tensor import Tensor

__all__ = [
    "FptArchitecture",
    "FptParameters",
    "layer_manifest",
    "forward_displacements",
    "extract_features",
    "global_feature",
    "displace_points",
    "fpt_forward",
    "registration_shift",
]


@dataclass(frozen=True)
class FptArchitecture:
    """Layer widths of the network; the topology itself is fixed.

    Defaults give the full-size network: per-cloud features of 1024,
    a 2048-wide global feature, and a six-layer displacement head.
    Smaller widths (used by fast tests) keep the identical graph.
    """

    embed_a: tuple[int, ...] = (64, 64)
    embed_b: tuple[int, ...] = (64, 128, 1024)
    tnet_mlp: tuple[int, ...] = (64, 128, 1024)
    tnet_fc: tuple[int, ...] = (512, 256)
    transformer: tuple[int, ...] = (1024, 512, 256, 128, 64, 3)

    def __post_init__(self):
        expected = {
            "embed_a": 2,
            "embed_b": 3,
            "tnet_mlp": 3,
            "tnet_fc": 2,
            "transformer": 6,
        }
        for name, count in expected.items():
            value = tuple(int(v) for v in getattr(self, name))
            object.__setattr__(self, name, value)
            if len(value) != count:
                raise DimensionError(
                    f"architecture field {name} must have {count} widths, got {value}"
                )
            if any(v < 1 for v in value):
                raise DimensionError(f"architecture widths must be positive: {name}={value}")
        if self.transformer[-1] != 3:
            raise DimensionError(
                f"displacement head must end in width 3, got {self.transformer[-1]}"
            )

    @property
    def feature_dim(self) -> int:
        return self.embed_b[-1]

    @property
    def global_dim(self) -> int:
        return 2 * self.feature_dim

    def to_dict(self) -> dict:
        return {f.name: list(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "FptArchitecture":
        return cls(**{f.name: tuple(d[f.name]) for f in fields(cls)})


def _chain(prefix: str, in_dim: int, widths: tuple[int, ...]) -> list[tuple[str, int, int]]:
    layers = []
    for i, out_dim in enumerate(widths):
        layers.append((f"{prefix}{i}", in_dim, out_dim))
        in_dim = out_dim
    return layers


def _tnet_chain(prefix: str, in_dim: int, k: int, arch: "FptArchitecture") -> list[tuple[str, int, int]]:
    layers = _chain(f"{prefix}.mlp", in_dim, arch.tnet_mlp)
    layers += _chain(f"{prefix}.fc", arch.tnet_mlp[-1], arch.tnet_fc)
    layers.append((f"{prefix}.out", arch.tnet_fc[-1], k * k))
    return layers


def layer_manifest(arch: FptArchitecture) -> list[tuple[str, int, int]]:
    """Ordered (layer name, fan-in, fan-out) for every dense layer."""
    layers = _tnet_chain("input_tnet", 3, 3, arch)
    layers += _chain("embed_a.", 3, arch.embed_a)
    layers += _tnet_chain("feature_tnet", arch.embed_a[-1], arch.embed_a[-1], arch)
    layers += _chain("embed_b.", arch.embed_a[-1], arch.embed_b)
    layers += _chain("transformer.", arch.global_dim + 3, arch.transformer)
    return layers


class FptParameters:
    """Named, shaped parameter tensors for one network instance.

    Every layer declared by the architecture must be present with its
    exact shape and finite values; this is validated on construction.
    """

    FORMAT_VERSION = 1

    def __init__(self, arch: FptArchitecture, tensors: dict[str, Tensor]):
        self.arch = arch
        self.tensors = dict(tensors)
        self.validate()

    def validate(self) -> None:
        for name, fan_in, fan_out in layer_manifest(self.arch):
            for suffix, shape in ((".weight", (fan_in, fan_out)), (".bias", (fan_out,))):
                key = name + suffix
                t = self.tensors.get(key)
                if t is None:
                    raise DimensionError(f"missing parameter tensor {key!r}")
                if t.data.shape != shape:
                    raise DimensionError(
                        f"parameter {key!r} has shape {t.data.shape}, expected {shape}"
                    )
                if not np.isfinite(t.data).all():
                    raise DimensionError(f"parameter {key!r} contains non-finite values")
        declared = {n + s for n, _, _ in layer_manifest(self.arch) for s in (".weight", ".bias")}
        extra = set(self.tensors) - declared
        if extra:
            raise DimensionError(f"unexpected parameter tensors: {sorted(extra)}")

    @classmethod
    def fresh(cls, arch: FptArchitecture = FptArchitecture(), seed: int = 0,
              identity_init: bool = True) -> "FptParameters":
        """Deterministic initialisation.

        Hidden (relu) layers use a relu-gain fan-in bound so activation
        variance neither decays nor explodes with depth; linear output
        layers use a unit-gain bound.  The displacement head's first
        layer sees two concatenated blocks of very different widths (the
        pooled pair feature, then 3 point coordinates), so each block
        gets its own fan-in bound — otherwise the coordinate signal
        drowns in the feature block.  With ``identity_init`` (the
        default) the transform-net outputs start at the identity matrix
        and the displacement head's last layer at zero, so the untrained
        network maps every point to itself.
        """
        rng = np.random.default_rng(seed)
        manifest = layer_manifest(arch)
        tnet_out = {"input_tnet.out": 3, "feature_tnet.out": arch.embed_a[-1]}
        last = manifest[-1][0]
        tensors: dict[str, Tensor] = {}
        for name, fan_in, fan_out in manifest:
            if name in tnet_out or name == last:
                bound = np.sqrt(3.0 / fan_in)
                weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            elif name == "transformer.0":
                gdim = arch.global_dim
                feat_bound = np.sqrt(6.0 / (2.0 * gdim))
                coord_bound = np.sqrt(6.0 / (2.0 * 3.0))
                weight = np.vstack(
                    [
                        rng.uniform(-feat_bound, feat_bound, size=(gdim, fan_out)),
                        rng.uniform(-coord_bound, coord_bound, size=(3, fan_out)),
                    ]
                )
            else:
                bound = np.sqrt(6.0 / fan_in)
                weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            bias = np.zeros(fan_out)
            if identity_init:
                if name in tnet_out:
                    weight = np.zeros((fan_in, fan_out))
                    bias = np.eye(tnet_out[name]).ravel()
                elif name == last:
                    weight = np.zeros((fan_in, fan_out))
            elif name in tnet_out:
                bias = np.eye(tnet_out[name]).ravel()
            tensors[name + ".weight"] = Tensor(weight, requires_grad=True)
            tensors[name + ".bias"] = Tensor(bias, requires_grad=True)
        return cls(arch, tensors)

    def copy(self) -> "FptParameters":
        return FptParameters(
            self.arch,
            {k: Tensor(t.data.copy(), requires_grad=True) for k, t in self.tensors.items()},
        )

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Parameters as arrays, in canonical manifest order."""
        out = []
        for name, _, _ in layer_manifest(self.arch):
            out.append((name + ".weight", self.tensors[name + ".weight"].data))
            out.append((name + ".bias", self.tensors[name + ".bias"].data))
        return out


# ---------------------------------------------------------------------------
# forward passes


def _dense(params: FptParameters, name: str, x: Tensor, activate: bool) -> Tensor:
    return T.pointwise_linear(
        x,
        params.tensors[name + ".weight"],
        params.tensors[name + ".bias"],
        "relu" if activate else None,
    )


def _tnet(params: FptParameters, prefix: str, x: Tensor, k: int) -> Tensor:
    """Predict a k x k alignment matrix from the (N, k) input."""
    arch = params.arch
    h = x
    for i in range(len(arch.tnet_mlp)):
        h = _dense(params, f"{prefix}.mlp{i}", h, True)
    v = T.max_pool_points(h)
    for i in range(len(arch.tnet_fc)):
        v = _dense(params, f"{prefix}.fc{i}", v, True)
    return T.reshape(_dense(params, f"{prefix}.out", v, False), (k, k))


def _folded_dense(params: FptParameters, name: str, x: Tensor, t: Tensor) -> Tensor:
    """Apply an alignment matrix and the next dense layer in one product.

    (x @ t) @ W equals x @ (t @ W); folding the small t @ W product once
    avoids a full points-sized pass.  With an identity alignment the
    folded weight equals W exactly, so zero-initialised alignment nets
    leave the layer untouched.
    """
    return T.pointwise_linear(
        x,
        T.matmul(t, params.tensors[name + ".weight"]),
        params.tensors[name + ".bias"],
        "relu",
    )


def _encode(params: FptParameters, x: Tensor) -> Tensor:
    """One shared encoder: (N, 3) points to a (feature_dim,) vector."""
    arch = params.arch
    h = _folded_dense(params, "embed_a.0", x, _tnet(params, "input_tnet", x, 3))
    for i in range(1, len(arch.embed_a)):
        h = _dense(params, f"embed_a.{i}", h, True)
    h = _folded_dense(
        params, "embed_b.0", h, _tnet(params, "feature_tnet", h, arch.embed_a[-1])
    )
    for i in range(1, len(arch.embed_b)):
        h = _dense(params, f"embed_b.{i}", h, True)
    return T.max_pool_points(h)


def _displace(
    params: FptParameters, points: Tensor, gfeat: Tensor, cache: dict | None = None
) -> Tensor:
    """Displacement head on [global feature | point coordinates].

    The first layer's weight rows are split into the global block and
    the coordinate block; the global product is a single vector folded
    into the bias and broadcast across rows.
    """
    arch = params.arch
    gdim = arch.global_dim
    w0 = params.tensors["transformer.0.weight"]
    b0 = params.tensors["transformer.0.bias"]
    key = id(w0)
    if cache is not None and key in cache:
        w_global, w_point = cache[key]
    else:
        w_global = T.slice_rows(w0, 0, gdim)
        w_point = T.slice_rows(w0, gdim, gdim + 3)
        if cache is not None:
            cache[key] = (w_global, w_point)
    row = T.pointwise_linear(gfeat, w_global, b0)
    h = T.pointwise_linear(points, w_point, row, "relu")
    for i in range(1, len(arch.transformer) - 1):
        h = _dense(params, f"transformer.{i}", h, True)
    return _dense(params, f"transformer.{len(arch.transformer) - 1}", h, False)


def forward_displacements(
    params: FptParameters,
    source: Tensor,
    target: Tensor,
    cache: dict | None = None,
) -> tuple[Tensor, Tensor]:
    """Differentiable forward pass.

    Returns the (N, 3) displacement tensor for the source points and the
    (2·feature_dim,) global feature tensor.
    """
    for name, t in (("source", source), ("target", target)):
        if t.data.ndim != 2 or t.data.shape[1] != 3:
            raise DimensionError(
                f"{name} points must have shape (N, 3), got {t.data.shape}"
            )
    feat = T.concat(_encode(params, source), _encode(params, target))
    return _displace(params, source, feat, cache), feat


# -- public, inference-only wrappers ----------------------------------------


def registration_shift(source_points, target_points) -> np.ndarray:
    """Centroid-matching translation obtained in a permutation-stable way.

    Registration handles the translation component in closed form: the
    source is shifted onto the target's centroid before encoding, and the
    network learns only the residual (rotation and deformation) field.
    At zero-displacement initialisation the full operator therefore
    reproduces plain centroid alignment exactly.

    Each column is sorted before summation so the result is bit-identical
    under any reordering of either cloud (a plain running mean is not).
    """
    src = np.asarray(source_points, dtype=np.float64)
    tgt = np.asarray(target_points, dtype=np.float64)
    for name, arr in (("source", src), ("target", tgt)):
        if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
            raise DimensionError(
                f"{name} points must have shape (N >= 1, 3), got {arr.shape}"
            )
    src_centroid = np.sort(src, axis=0).sum(axis=0) / src.shape[0]
    tgt_centroid = np.sort(tgt, axis=0).sum(axis=0) / tgt.shape[0]
    return tgt_centroid - src_centroid


def _require_normalized(p: PointSet, what: str) -> None:
    if p.unit != "normalized":
        raise UnitMismatchError(
            f"{what} requires normalized coordinates, got unit {p.unit!r}; "
            "normalize to [-1, 1] first"
        )


def extract_features(p: PointSet, params: FptParameters) -> np.ndarray:
    """Permutation-invariant (feature_dim,) encoding of one cloud."""
    _require_normalized(p, "extract_features")
    with T.no_grad():
        return _encode(params, Tensor(p.points)).data.copy()


def global_feature(
    source: PointSet, target: PointSet, params: FptParameters
) -> np.ndarray:
    """Concatenated source+target feature vector of length 2·feature_dim."""
    _require_normalized(source, "global_feature")
    _require_normalized(target, "global_feature")
    with T.no_grad():
        return np.concatenate(
            [
                _encode(params, Tensor(source.points)).data,
                _encode(params, Tensor(target.points)).data,
            ]
        )


def displace_points(
    points: np.ndarray, gfeat: np.ndarray, params: FptParameters
) -> np.ndarray:
    """Evaluate the displacement field at arbitrary (K, 3) coordinates.

    The head is a continuous function of the global feature and a
    coordinate, so landmarks (or any other points) can ride the learned
    field even though they never enter the encoders.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DimensionError(f"points must have shape (K, 3), got {pts.shape}")
    g = np.asarray(gfeat, dtype=np.float64).reshape(-1)
    if g.shape != (params.arch.global_dim,):
        raise DimensionError(
            f"global feature must have shape ({params.arch.global_dim},), got {g.shape}"
        )
    with T.no_grad():
        return _displace(params, Tensor(pts), Tensor(g)).data.copy()


def fpt_forward(
    source: PointSet, target: PointSet, params: FptParameters
) -> tuple[np.ndarray, PointSet]:
    """Register source onto target in one feed-forward pass.

    The source is first shifted onto the target's centroid
    (:func:`registration_shift`); the network predicts the residual
    field at the shifted coordinates.  Returns the total per-point
    displacements (shift plus residual) and the displaced source set.
    Source and target may differ in size; the output has exactly one
    point per source point, in the same order.
    """
    _require_normalized(source, "fpt_forward")
    _require_normalized(target, "fpt_forward")
    shift = registration_shift(source.points, target.points)
    shifted = source.points + shift
    with T.no_grad():
        disp, _ = forward_displacements(
            params, Tensor(shifted), Tensor(target.points)
        )
    moved = PointSet(shifted + disp.data, "transformed", "normalized")
    return shift + disp.data, moved
