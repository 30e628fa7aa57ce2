"""Named-tensor checkpoint container.

Binary layout: 4-byte magic "ABTT", uint32 format version, uint32 header
length, canonical-JSON header, then a payload of little-endian float32
tensor data. The header holds free-form metadata plus the tensor table
(name, shape, byte offset into the payload). Save -> load -> save is
byte-identical because the header JSON is canonical (sorted keys, fixed
separators) and tensors are laid out in name order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "CheckpointError",
    "BadMagicError",
    "VersionError",
    "HeaderError",
    "TruncatedPayloadError",
    "ShapeTableError",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC = b"ABTT"
FORMAT_VERSION = 1
_FIXED = struct.Struct("<4sII")  # magic, version, header length


class CheckpointError(Exception):
    """Base class for checkpoint container failures."""


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class HeaderError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class ShapeTableError(CheckpointError):
    """Tensor table disagrees with what the consumer declares."""


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write tensors (cast to little-endian float32) plus metadata."""
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"meta": meta, "tensors": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_FIXED.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back; every declared tensor is validated against
    the payload length before any array is materialized."""
    data = Path(path).read_bytes()
    if len(data) < _FIXED.size:
        raise TruncatedPayloadError(f"{path}: file shorter than the fixed header")
    magic, version, header_len = _FIXED.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    header_end = _FIXED.size + header_len
    if len(data) < header_end:
        raise TruncatedPayloadError(f"{path}: header truncated")
    try:
        header = json.loads(data[_FIXED.size : header_end].decode("utf-8"))
        meta = header["meta"]
        entries = header["tensors"]
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise HeaderError(f"{path}: malformed header ({exc})") from exc

    payload = data[header_end:]
    tensors: dict[str, np.ndarray] = {}
    total = 0
    for entry in entries:
        try:
            name, shape, offset = entry["name"], entry["shape"], entry["offset"]
        except (KeyError, TypeError) as exc:
            raise HeaderError(f"{path}: malformed tensor entry {entry!r}") from exc
        size = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if offset < 0 or offset + size > len(payload):
            raise TruncatedPayloadError(
                f"{path}: tensor {name!r} extends past the payload"
            )
        flat = np.frombuffer(payload, dtype="<f4", count=size // 4, offset=offset)
        tensors[name] = flat.reshape(shape).copy()
        total += size
    if total != len(payload):
        raise HeaderError(
            f"{path}: payload is {len(payload)} bytes but the table covers {total}"
        )
    return tensors, meta
