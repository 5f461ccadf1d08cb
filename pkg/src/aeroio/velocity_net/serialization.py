"""Binary parameter files.

Layout (little-endian): magic ``b"AIIO"``, ``u32`` format version, then
tensors until end of file, each as ``u32`` name length, UTF-8 name, ``u32``
rank, ``rank`` x ``u32`` dims, and ``prod(dims)`` float64 values (C order).
"""
from __future__ import annotations

import struct

import numpy as np

from .._fsutil import atomic_write
from ..exceptions import ParseError

MAGIC = b"AIIO"
VERSION = 1


def dumps(tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(data: bytes) -> dict:
    if data[:4] != MAGIC:
        raise ParseError("not a parameter file (bad magic)")
    if len(data) < 8:
        raise ParseError("truncated header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise ParseError(f"unsupported parameter file version {version}")
    pos, out = 8, {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if pos + 8 * count > len(data):
                raise ParseError(f"tensor {name!r} truncated")
            out[name] = np.reshape(np.frombuffer(data, "<f8", count, pos), dims).copy()
            pos += 8 * count
    except struct.error as exc:
        raise ParseError(f"corrupt parameter file at byte {pos}") from exc
    return out


def save(path, tensors: dict) -> None:
    """Write atomically (temp file in the target directory, then rename)."""
    atomic_write(path, dumps(tensors))


def load(path) -> dict:
    with open(path, "rb") as fh:
        return loads(fh.read())
