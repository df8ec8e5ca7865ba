"""FRTD binary tensor files.

Layout::

    b"FRTD" | version u8 (=1) | dtype u8 (=0, f32) | ndim u8 |
    ndim x u32 LE dims | row-major f32 LE payload
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .core import CorruptionError, FormatError

MAGIC = b"FRTD"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sBBB")


def encode_tensor(tensor) -> bytes:
    arr = np.asarray(tensor)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    if arr.ndim > 255:
        raise FormatError("FRTD supports at most 255 dimensions")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + dims + arr.astype("<f4", copy=False).tobytes(order="C")


def decode_tensor(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError(f"{source}: too short for an FRTD header")
    magic, version, dtype, ndim = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported FRTD version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{source}: unsupported dtype code {dtype}")
    offset = _HEADER.size
    if len(buf) < offset + 4 * ndim:
        raise CorruptionError(f"{source}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    count = 1
    for d in dims:
        count *= d
    if len(buf) - offset != 4 * count:
        raise CorruptionError(
            f"{source}: payload has {len(buf) - offset} bytes, expected {4 * count} for dims {list(dims)}"
        )
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    return data.astype(np.float32).reshape(dims)


def save_tensor(path: "str | os.PathLike", tensor) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(tensor))


def load_tensor(path: "str | os.PathLike") -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_tensor(buf, source=os.fspath(path))
