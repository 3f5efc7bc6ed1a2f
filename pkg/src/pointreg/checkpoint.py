"""Versioned binary checkpoints for network parameters.

Layout:

    8 bytes   magic ``FPTCHKP1``
    4 bytes   format version (little-endian uint32)
    8 bytes   manifest length (little-endian uint64)
    ...       manifest: UTF-8 JSON with the architecture widths and the
              ordered layer list (name + shape)
    ...       parameter data: little-endian float64, C order, laid out
              exactly as the manifest declares
    32 bytes  SHA-256 of everything above

Loading validates the whole container before constructing anything, so a
failed load leaves no partial state.  Corruption, unsupported versions,
and architecture mismatches raise distinct errors.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointShapeError,
    CheckpointVersionError,
    CorruptCheckpointError,
)
from .fptnet import FptArchitecture, FptParameters
from .tensor import Tensor

__all__ = ["save_checkpoint", "load_checkpoint", "MAGIC", "FORMAT_VERSION"]

MAGIC = b"FPTCHKP1"
FORMAT_VERSION = 1
_DIGEST = 32
_HEAD = struct.Struct("<8sIQ")


def save_checkpoint(params: FptParameters, path) -> None:
    """Write parameters atomically (temp file + rename)."""
    named = params.named_arrays()
    manifest = {
        "format_version": FORMAT_VERSION,
        "architecture": params.arch.to_dict(),
        "layers": [{"name": n, "shape": list(a.shape)} for n, a in named],
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += _HEAD.pack(MAGIC, FORMAT_VERSION, len(manifest_bytes))
    blob += manifest_bytes
    for _, arr in named:
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    blob += hashlib.sha256(blob).digest()

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(blob))
    os.replace(tmp, path)


def load_checkpoint(path, arch: FptArchitecture | None = None) -> FptParameters:
    """Read and fully validate a checkpoint.

    Args:
        path: checkpoint file.
        arch: when given, the architecture the caller expects; a
            mismatch raises :class:`CheckpointShapeError` naming the
            first differing layer instead of silently adapting.

    Raises:
        CorruptCheckpointError: truncated bytes, bad magic, checksum or
            manifest problems.
        CheckpointVersionError: the format version is not supported.
        CheckpointShapeError: layer shapes do not match ``arch``.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size + _DIGEST:
        raise CorruptCheckpointError(
            f"checkpoint is truncated ({len(data)} bytes, header alone needs "
            f"{_HEAD.size + _DIGEST})"
        )
    magic, version, manifest_len = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"bad magic bytes {magic!r}; not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version} is not supported "
            f"(this build reads version {FORMAT_VERSION})"
        )
    digest = data[-_DIGEST:]
    if hashlib.sha256(data[:-_DIGEST]).digest() != digest:
        raise CorruptCheckpointError("checksum mismatch; checkpoint bytes are corrupt")

    body = data[_HEAD.size : -_DIGEST]
    if len(body) < manifest_len:
        raise CorruptCheckpointError("checkpoint is truncated inside the manifest")
    try:
        manifest = json.loads(body[:manifest_len].decode("utf-8"))
        file_arch = FptArchitecture.from_dict(manifest["architecture"])
        layers = [(str(l["name"]), tuple(int(s) for s in l["shape"])) for l in manifest["layers"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"unreadable checkpoint manifest: {exc}") from exc

    if arch is not None and arch != file_arch:
        expected = {
            name + suffix: shape
            for name, fan_in, fan_out in _manifest_shapes(arch)
            for suffix, shape in ((".weight", (fan_in, fan_out)), (".bias", (fan_out,)))
        }
        for name, shape in layers:
            if name in expected and expected[name] != shape:
                raise CheckpointShapeError(
                    f"layer {name!r} has shape {shape} in the checkpoint but the "
                    f"requested architecture declares {expected[name]}"
                )
        raise CheckpointShapeError(
            "checkpoint architecture does not match the requested architecture"
        )

    payload = body[manifest_len:]
    sizes = [int(np.prod(shape)) for _, shape in layers]
    if len(payload) != 8 * sum(sizes):
        raise CorruptCheckpointError(
            f"parameter payload holds {len(payload)} bytes but the manifest "
            f"declares {8 * sum(sizes)}"
        )
    tensors: dict[str, Tensor] = {}
    offset = 0
    for (name, shape), size in zip(layers, sizes):
        arr = np.frombuffer(payload, dtype="<f8", count=size, offset=offset)
        offset += 8 * size
        tensors[name] = Tensor(arr.astype(np.float64).reshape(shape), requires_grad=True)
    try:
        return FptParameters(file_arch, tensors)
    except Exception as exc:
        raise CorruptCheckpointError(f"checkpoint contents are inconsistent: {exc}") from exc


def _manifest_shapes(arch: FptArchitecture):
    from .fptnet import layer_manifest

    return layer_manifest(arch)
