"""DFTN binary tensor records.

Layout (little-endian): magic ``b"DFTN"``, u32 rank, rank x u64 dims,
then the float64 payload in row-major order.
"""

from __future__ import annotations

import math
import struct

import numpy as np

MAGIC = b"DFTN"


class TensorFormatError(ValueError):
    """Malformed DFTN header."""


class TruncatedPayloadError(TensorFormatError):
    """The DFTN payload is shorter than its header promises."""


def tensor_to_bytes(arr) -> bytes:
    a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
    head = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes(order="C")


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple:
    """Decode one record starting at ``offset``; returns ``(array, end_offset)``."""
    if len(buf) - offset < 8:
        raise TensorFormatError("buffer too short for a DFTN header")
    if buf[offset:offset + 4] != MAGIC:
        raise TensorFormatError(f"bad magic {bytes(buf[offset:offset + 4])!r}")
    (rank,) = struct.unpack_from("<I", buf, offset + 4)
    pos = offset + 8
    if rank > 32 or len(buf) - pos < 8 * rank:
        raise TensorFormatError(f"implausible or truncated rank field ({rank})")
    dims = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    if any(d >= 2**40 for d in dims):
        raise TensorFormatError(f"implausible shape {dims}")
    n = math.prod(dims)
    nbytes = 8 * n
    if len(buf) - pos < nbytes:
        raise TruncatedPayloadError(f"payload needs {nbytes} bytes, {len(buf) - pos} available")
    arr = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(dims)
    return arr, pos + nbytes


def save_tensor(path, arr) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise TensorFormatError(f"{len(buf) - end} trailing bytes after DFTN record")
    return arr
