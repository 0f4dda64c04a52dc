"""Binary checkpoint container.

Layout (all integers little-endian uint32)::

    b"GRNNBF01"
    count
    count x { name_len, name (utf-8), rank, dims[rank], float32 data }
    config_len, config (utf-8 JSON)
    layout_len, layout (utf-8 JSON)

Loading rejects files whose total length differs from what the records
declare.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

__all__ = ["MAGIC", "CheckpointError", "save_checkpoint", "load_checkpoint", "encode_checkpoint", "decode_checkpoint"]

MAGIC = b"GRNNBF01"


class CheckpointError(ValueError):
    pass


def encode_checkpoint(arrays: dict, config: dict, layout: dict | None) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for name, value in arrays.items():
        value = np.asarray(value)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    for blob in (config, layout or {}):
        raw = json.dumps(blob, sort_keys=True).encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    return b"".join(parts)


def decode_checkpoint(buf: bytes):
    """Return (arrays, config, layout) from checkpoint bytes."""
    if buf[:8] != MAGIC:
        raise CheckpointError("bad magic: not a GRNNBF01 checkpoint")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint: need {pos + n} bytes, have {len(buf)}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        arrays[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).copy()
    blobs = []
    for _ in range(2):
        (n,) = struct.unpack("<I", take(4))
        blobs.append(json.loads(take(n).decode("utf-8")))
    if pos != len(buf):
        raise CheckpointError(f"checkpoint has {len(buf) - pos} trailing bytes")
    return arrays, blobs[0], blobs[1]


def save_checkpoint(path, arrays: dict, config: dict, layout: dict | None = None) -> None:
    data = encode_checkpoint(arrays, config, layout)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fp:
        fp.write(data)
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as fp:
        return decode_checkpoint(fp.read())
