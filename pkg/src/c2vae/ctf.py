"""CTF tensor container: the on-disk format for images, checkpoints, latents.

Layout, all little-endian:

    magic   4 bytes  ``C2T1``
    dtype   u8       0 = float64 (the only defined code)
    ndim    u8
    dims    ndim × u32
    payload row-major float64
"""

import struct

import numpy as np

MAGIC = b"C2T1"
DTYPE_F64 = 0


class CtfError(ValueError):
    """Malformed CTF header or truncated payload."""


def dumps(array):
    """Serialize a float64 array to CTF bytes."""
    arr = np.asarray(array, dtype=np.float64, order="C")
    if arr.ndim > 255:
        raise CtfError("too many dimensions for CTF")
    header = MAGIC + struct.pack("<BB", DTYPE_F64, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def write(path, array):
    with open(path, "wb") as fh:
        fh.write(dumps(array))


def _parse_header(buf, offset):
    if buf[offset:offset + 4] != MAGIC:
        raise CtfError(f"bad magic {buf[offset:offset + 4]!r}")
    dtype, ndim = struct.unpack_from("<BB", buf, offset + 4)
    if dtype != DTYPE_F64:
        raise CtfError(f"unknown dtype code {dtype}")
    dims = struct.unpack_from(f"<{ndim}I", buf, offset + 6)
    return dims, offset + 6 + 4 * ndim


def loads(buf, offset=0):
    """Parse one tensor from ``buf`` at ``offset``; returns (array, next_offset)."""
    dims, start = _parse_header(buf, offset)
    count = 1
    for d in dims:
        count *= d
    end = start + 8 * count
    if end > len(buf):
        raise CtfError("truncated payload")
    arr = np.frombuffer(buf[start:end], dtype="<f8").reshape(dims)
    return arr.copy(), end


def read(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = loads(buf)
    if end != len(buf):
        raise CtfError(f"{path}: trailing bytes after tensor")
    return arr
