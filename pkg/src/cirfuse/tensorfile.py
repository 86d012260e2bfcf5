"""Binary tensor files: the bit-exact interchange format of the engine.

Layout, all little-endian, no padding:

    magic    4 bytes  "MVST"
    version  u8       1
    dtype    u8       1 (32-bit IEEE float, little-endian)
    reserved u16      0
    rank     u32
    dims     rank x u32
    payload  row-major float32, 4 * prod(dims) bytes

Values are stored in 32 bits and promoted to float64 on read.  Writing a
just-read payload back reproduces it bit for bit.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    NonFiniteValueError,
    ShapeMismatchError,
    TruncatedFileError,
    UnsupportedVersionError,
)

MAGIC = b"MVST"
VERSION = 1
DTYPE_F32_LE = 1

_HEADER = struct.Struct("<BBHI")  # version, dtype, reserved, rank


def tensor_body(values, dims) -> bytes:
    """Serialize header-after-magic plus payload (shared with model packs)."""
    dims = tuple(int(d) for d in dims)
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    count = 1
    for d in dims:
        if d < 0:
            raise ShapeMismatchError(f"negative dimension in {dims}")
        count *= d
    if arr.size != count:
        raise ShapeMismatchError(f"{arr.size} values do not fill dims {dims}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("refusing to write non-finite values")
    parts = [_HEADER.pack(VERSION, DTYPE_F32_LE, 0, len(dims))]
    parts.append(struct.pack(f"<{len(dims)}I", *dims))
    payload = arr.astype("<f4").tobytes()
    parts.append(payload)
    return b"".join(parts)


def parse_tensor_body(data: bytes, offset: int, where: str) -> tuple[np.ndarray, tuple[int, ...], int]:
    """Parse a tensor body at ``offset``; returns (values, dims, next offset)."""
    end = offset + _HEADER.size
    if end > len(data):
        raise TruncatedFileError(f"{where}: header truncated")
    version, dtype, reserved, rank = _HEADER.unpack_from(data, offset)
    if version != VERSION:
        raise UnsupportedVersionError(f"{where}: unsupported version {version}")
    if dtype != DTYPE_F32_LE:
        raise UnsupportedVersionError(f"{where}: unsupported dtype code {dtype}")
    if reserved != 0:
        raise UnsupportedVersionError(f"{where}: reserved field must be 0, got {reserved}")
    dims_end = end + 4 * rank
    if dims_end > len(data):
        raise TruncatedFileError(f"{where}: dims truncated")
    dims = struct.unpack_from(f"<{rank}I", data, end)
    count = 1
    for d in dims:
        count *= d
    payload_end = dims_end + 4 * count
    if payload_end > len(data):
        raise TruncatedFileError(f"{where}: payload truncated")
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=dims_end)
    values = flat.astype(np.float64).reshape(dims)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError(f"{where}: payload contains non-finite values")
    return values, dims, payload_end


def write_tensor(path, values, dims=None) -> None:
    """Write a tensor file; dims default to the array's own shape."""
    arr = np.asarray(values, dtype=np.float64)
    if dims is None:
        dims = arr.shape
    Path(path).write_bytes(MAGIC + tensor_body(arr, dims))


def read_tensor(path) -> tuple[np.ndarray, tuple[int, ...]]:
    """Read a tensor file back as (float64 values, dims)."""
    data = Path(path).read_bytes()
    where = str(path)
    if len(data) < 4:
        raise TruncatedFileError(f"{where}: shorter than the magic")
    if data[:4] != MAGIC:
        raise BadMagicError(f"{where}: bad magic {data[:4]!r}")
    values, dims, end = parse_tensor_body(data, 4, where)
    if end != len(data):
        raise TruncatedFileError(f"{where}: {len(data) - end} trailing bytes")
    return values, dims
