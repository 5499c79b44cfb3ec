"""Binary checkpoint container.

Byte layout (all integers little-endian):

    bytes 0-3   magic "LSEG"
    bytes 4-7   u32 format version (currently 1)
    bytes 8-15  u64 header length in bytes
    ...         UTF-8 JSON header
    ...         concatenated raw tensor payloads, little-endian

The JSON header carries the model spec, optional channel/band-normalization
configuration, free-form training metadata, and a tensor manifest of
(name, dtype, shape, offset, nbytes) with offsets relative to the start of
the payload region. Offsets are contiguous and non-overlapping; loading
validates every field and reports each corruption class as a distinct error.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .models import Model, ModelSpec, build_model

MAGIC = b"LSEG"
VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint container problems."""


class BadMagicError(CheckpointError):
    """File does not start with the LSEG magic."""


class VersionError(CheckpointError):
    """Format version is not supported."""


class TruncatedError(CheckpointError):
    """File ends before the declared header or payload does."""


class ManifestError(CheckpointError):
    """Tensor manifest disagrees with the model or the payload bytes."""


def _tensor_entries(model: Model):
    for name, p in model.named_parameters():
        yield name, p.data
    for name, b in model.named_buffers():
        yield name, b


def save_checkpoint(model: Model, path: str, band_stats: dict | None = None,
                    channels: dict | None = None, meta: dict | None = None) -> None:
    """Write the model (weights + BN running stats) and its configuration."""
    manifest = []
    payloads = []
    offset = 0
    for name, arr in _tensor_entries(model):
        raw = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
        manifest.append({
            "name": name,
            "dtype": arr.dtype.name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        payloads.append(raw)
        offset += len(raw)
    header = {
        "spec": model.spec.to_dict(),
        "channels": channels,
        "band_stats": band_stats,
        "meta": meta or {},
        "tensors": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for raw in payloads:
            f.write(raw)


def read_header(path: str) -> dict:
    """Parse and validate the container prefix; return the JSON header."""
    with open(path, "rb") as f:
        prefix = f.read(16)
        if len(prefix) < 16:
            raise TruncatedError(f"{path}: file shorter than the fixed 16-byte prefix")
        if prefix[:4] != MAGIC:
            raise BadMagicError(f"{path}: bad magic {prefix[:4]!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", prefix[4:8])
        if version != VERSION:
            raise VersionError(f"{path}: unsupported version {version}, expected {VERSION}")
        (hlen,) = struct.unpack("<Q", prefix[8:16])
        blob = f.read(hlen)
        if len(blob) < hlen:
            raise TruncatedError(f"{path}: header truncated ({len(blob)} of {hlen} bytes)")
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ManifestError(f"{path}: header is not valid JSON: {e}") from e
    for key in ("spec", "tensors"):
        if key not in header:
            raise ManifestError(f"{path}: header missing {key!r}")
    prev_end = 0
    for entry in header["tensors"]:
        for key in ("name", "dtype", "shape", "offset", "nbytes"):
            if key not in entry:
                raise ManifestError(f"{path}: manifest entry missing {key!r}")
        if entry["offset"] != prev_end:
            raise ManifestError(
                f"{path}: tensor {entry['name']!r} offset {entry['offset']} "
                f"overlaps or leaves a gap (expected {prev_end})"
            )
        expected = int(np.prod(entry["shape"], dtype=np.int64)) * np.dtype(entry["dtype"]).itemsize
        if entry["nbytes"] != expected:
            raise ManifestError(
                f"{path}: tensor {entry['name']!r} declares {entry['nbytes']} bytes "
                f"but dtype/shape imply {expected}"
            )
        prev_end = entry["offset"] + entry["nbytes"]
    return header


def load_checkpoint(path: str):
    """Rebuild the model from a container; returns (model, header).

    The ModelSpec is reconstructed first, then every tensor is filled from
    the manifest. Predictions of the loaded model are bitwise-identical to
    the saved one.
    """
    header = read_header(path)
    with open(path, "rb") as f:
        prefix = f.read(16)
    payload_start = 16 + struct.unpack("<Q", prefix[8:16])[0]
    try:
        spec = ModelSpec.from_dict(header["spec"])
    except (TypeError, ValueError) as e:
        raise ManifestError(f"{path}: invalid model spec in header: {e}") from e
    model = build_model(spec, rng=None)
    tensors = {name: arr for name, arr in _tensor_entries(model)}
    manifest_names = [e["name"] for e in header["tensors"]]
    if sorted(manifest_names) != sorted(tensors):
        missing = sorted(set(tensors) - set(manifest_names))
        extra = sorted(set(manifest_names) - set(tensors))
        raise ManifestError(
            f"{path}: manifest does not match the architecture "
            f"(missing {missing}, unexpected {extra})"
        )
    with open(path, "rb") as f:
        data = f.read()
    for entry in header["tensors"]:
        name = entry["name"]
        target = tensors[name]
        if list(target.shape) != list(entry["shape"]):
            raise ManifestError(
                f"{path}: tensor {name!r} shape {entry['shape']} does not match "
                f"the architecture's {list(target.shape)}"
            )
        start = payload_start + entry["offset"]
        raw = data[start : start + entry["nbytes"]]
        if len(raw) < entry["nbytes"]:
            raise TruncatedError(
                f"{path}: payload for tensor {name!r} truncated "
                f"({len(raw)} of {entry['nbytes']} bytes)"
            )
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]).newbyteorder("<"))
        target[...] = arr.reshape(entry["shape"]).astype(target.dtype)
    return model, header
