"""Binary checkpoint format for named float64 parameter tables.

Layout: magic ``MSMU``, uint16 format version, uint32 entry count, then per
entry a length-prefixed utf-8 name, uint8 rank, uint32 dims, and the raw
little-endian float64 payload.  A crc32 of everything after the magic trails
the file.
"""
from __future__ import annotations

import struct
import zlib

import numpy as np

__all__ = ["MAGIC", "VERSION", "save_params", "load_params",
           "CheckpointError"]

MAGIC = b"MSMU"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupt or unsupported checkpoint file."""


def save_params(path: str, params: dict) -> None:
    """Write ``{name: array-or-Tensor}`` to ``path``."""
    body = bytearray()
    body += struct.pack("<HI", VERSION, len(params))
    for name, value in params.items():
        arr = np.ascontiguousarray(
            getattr(value, "data", value), dtype="<f8")
        encoded = name.encode("utf-8")
        body += struct.pack("<H", len(encoded)) + encoded
        body += struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    crc = zlib.crc32(bytes(body))
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes(body) + struct.pack("<I", crc))


def load_params(path: str) -> dict:
    """Read a checkpoint back into ``{name: ndarray}``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 14 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, trailer = blob[4:-4], blob[-4:]
    if zlib.crc32(body) != struct.unpack("<I", trailer)[0]:
        raise CheckpointError(f"{path}: checksum mismatch")
    version, count = struct.unpack_from("<HI", body, 0)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    off = 6
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", body, off)
        off += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(body, dtype="<f8", count=size, offset=off)
        off += 8 * size
        out[name] = arr.reshape(shape).astype(np.float64)
    if off != len(body):
        raise CheckpointError(f"{path}: trailing bytes in parameter table")
    return out
