"""Binary checkpoint format.

Layout (all integers little-endian):

    b"SDML" | u32 version | 32-byte config sha256 | u64 step | f64 frozen gamma
    | u32 blob count | blobs...

Each blob is ``u32 name length | utf-8 name | u32 ndim | u64 dims... | float64 data``
in row-major order.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"SDML"
VERSION = 1
_HEAD = struct.Struct("<4sI32sQdI")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    blobs: dict[str, np.ndarray]
    config_hash: bytes = b"\0" * 32
    step: int = 0
    gamma: float = 0.0
    version: int = VERSION


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    if len(ckpt.config_hash) != 32:
        raise ValueError("config hash must be 32 bytes")
    parts = [_HEAD.pack(MAGIC, VERSION, ckpt.config_hash, ckpt.step, ckpt.gamma, len(ckpt.blobs))]
    for name, arr in ckpt.blobs.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_checkpoint(path, expected_hash: bytes | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    if len(data) < _HEAD.size:
        raise CheckpointError(f"{path}: truncated header")
    _, version, chash, step, gamma, count = _HEAD.unpack_from(data, 0)
    if version > VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if expected_hash is not None and chash != expected_hash:
        log.warning("%s: config hash differs from the current config", path)
    off = _HEAD.size
    blobs: dict[str, np.ndarray] = {}
    name = ""
    try:
        for i in range(count):
            name = f"#{i}"
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + n].decode("utf-8")
            if len(name.encode("utf-8")) != n:
                raise struct.error("short name")
            off += n
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            dims = struct.unpack_from(f"<{ndim}Q", data, off)
            off += 8 * ndim
            nbytes = 8 * int(np.prod(dims, dtype=np.int64))
            if off + nbytes > len(data):
                raise struct.error("short data")
            blobs[name] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=off).reshape(dims).astype(np.float64)
            off += nbytes
    except (struct.error, UnicodeDecodeError):
        raise CheckpointError(f"{path}: truncated blob {name!r}") from None
    return Checkpoint(blobs, chash, step, gamma, version)
