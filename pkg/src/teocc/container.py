"""The "TEOC" binary tensor container used for datasets and checkpoints.

Layout (little-endian): magic ``b"TEOC"``, u16 format version, u8 dtype code
(0 = float32, 1 = int32), u8 rank, ``rank`` u32 dims, then the C-order payload.
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"TEOC"
VERSION = 1
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<i4")}
_HEADER = struct.Struct("<4sHBB")


class ContainerError(ValueError):
    pass


def _dtype_code(arr: np.ndarray) -> int:
    if arr.dtype.kind == "f":
        return 0
    if arr.dtype.kind in "iub":
        return 1
    raise ContainerError(f"unsupported dtype {arr.dtype}")


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    code = _dtype_code(arr)
    out = np.ascontiguousarray(arr, dtype=_CODES[code])
    if code == 1 and arr.dtype.kind in "iu" and arr.size:
        if arr.min() < np.iinfo(np.int32).min or arr.max() > np.iinfo(np.int32).max:
            raise ContainerError("integer values overflow int32")
    head = _HEADER.pack(MAGIC, VERSION, code, out.ndim)
    dims = struct.pack(f"<{out.ndim}I", *out.shape)
    return head + dims + out.tobytes()


def decode_tensor(buf: bytes, name: str = "<buffer>") -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise ContainerError(f"{name}: truncated header, expected at least {_HEADER.size} bytes, got {len(buf)}")
    magic, version, code, rank = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ContainerError(f"{name}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ContainerError(f"{name}: unsupported format version {version}")
    if code not in _CODES:
        raise ContainerError(f"{name}: unknown dtype code {code}")
    dims_end = _HEADER.size + 4 * rank
    if len(buf) < dims_end:
        raise ContainerError(f"{name}: truncated dims, expected {dims_end} header bytes, got {len(buf)}")
    shape = struct.unpack_from(f"<{rank}I", buf, _HEADER.size)
    dtype = _CODES[code]
    expected = dims_end + int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) != expected:
        raise ContainerError(f"{name}: expected {expected} bytes, got {len(buf)}")
    arr = np.frombuffer(buf, dtype=dtype, offset=dims_end).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def write_tensor(path, arr) -> None:
    data = encode_tensor(arr)
    with open(path, "wb") as f:
        f.write(data)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    return decode_tensor(buf, os.fspath(path))
