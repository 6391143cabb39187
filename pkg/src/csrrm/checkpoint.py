"""Named-parameter checkpoints: length-prefixed float64 arrays plus a
manifest listing name/shape/byte-offset, and checksums for freeze audits.

Layout (little-endian):

    magic "SRRMCKP1" | u32 manifest length | manifest JSON |
    per array: u32 name length | name utf-8 | u32 rank | u32 dims... |
    f64 data
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor

__all__ = [
    "CheckpointError",
    "save_params",
    "load_params",
    "assign_params",
    "param_checksum",
]

CHECKPOINT_MAGIC = b"SRRMCKP1"


class CheckpointError(Exception):
    """A checkpoint file is malformed or does not match the model."""


def _array_record(name: str, value: np.ndarray) -> bytes:
    name_b = name.encode("utf-8")
    dims = struct.pack(f"<{value.ndim}I", *value.shape) if value.ndim else b""
    return (
        struct.pack("<I", len(name_b))
        + name_b
        + struct.pack("<I", value.ndim)
        + dims
        + value.astype("<f8").tobytes()
    )


def save_params(params: dict[str, Tensor], path) -> None:
    records = []
    manifest = []
    for name, tensor in params.items():
        rec = _array_record(name, tensor.value)
        records.append(rec)
        manifest.append({"name": name, "shape": list(tensor.shape)})
    manifest_bytes = b""  # two passes: offsets depend on the manifest length
    for _ in range(2):
        manifest_bytes = json.dumps({"arrays": manifest}).encode("utf-8")
        offset = len(CHECKPOINT_MAGIC) + 4 + len(manifest_bytes)
        for entry, rec in zip(manifest, records):
            header = 4 + len(entry["name"].encode("utf-8")) + 4 + 4 * len(entry["shape"])
            entry["offset"] = offset + header
            offset += len(rec)
    blob = CHECKPOINT_MAGIC + struct.pack("<I", len(manifest_bytes)) + manifest_bytes
    blob += b"".join(records)
    Path(path).write_bytes(blob)


def load_params(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 4 or not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    (mlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    try:
        manifest = json.loads(raw[pos : pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad manifest: {exc}") from exc
    pos += mlen
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["arrays"]:
        if pos + 4 > len(raw):
            raise CheckpointError(f"{path}: truncated at array header")
        (nlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", raw, pos) if rank else ()
        pos += 4 * rank
        if name != entry["name"] or list(shape) != entry["shape"]:
            raise CheckpointError(
                f"{path}: record {name} {shape} disagrees with manifest entry {entry}"
            )
        if entry["offset"] != pos:
            raise CheckpointError(f"{path}: offset mismatch for {name}")
        count = int(np.prod(shape)) if shape else 1
        if pos + 8 * count > len(raw):
            raise CheckpointError(f"{path}: truncated data for {name}")
        arrays[name] = (
            np.frombuffer(raw, dtype="<f8", count=count, offset=pos)
            .reshape(shape)
            .copy()
        )
        pos += 8 * count
    return arrays


def assign_params(params: dict[str, Tensor], arrays: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into an existing parameter structure by name."""
    missing = params.keys() - arrays.keys()
    extra = arrays.keys() - params.keys()
    if missing or extra:
        raise CheckpointError(
            f"parameter names disagree: missing {sorted(missing)}, extra {sorted(extra)}"
        )
    for name, tensor in params.items():
        if arrays[name].shape != tensor.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: {arrays[name].shape} vs {tensor.shape}"
            )
        tensor.value[...] = arrays[name]


def param_checksum(params: dict[str, Tensor]) -> str:
    """SHA-256 over name-sorted (name, shape, raw bytes); freeze audit key."""
    digest = hashlib.sha256()
    for name in sorted(params):
        tensor = params[name]
        digest.update(name.encode("utf-8"))
        digest.update(str(tensor.shape).encode("utf-8"))
        digest.update(np.ascontiguousarray(tensor.value).tobytes())
    return digest.hexdigest()
