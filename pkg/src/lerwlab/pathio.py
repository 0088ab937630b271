"""Binary path dumps.

Layout (all little-endian)::

    offset  size  field
    0       4     magic b"LRWP"
    4       2     version (1)
    6       2     flags (bit 0: loop-erased)
    8       8     mesh m (float64)
    16      8     number of steps n (uint64)
    24      24    start point x, y, z (int64)
    48      ...   ceil(3 n / 8) bytes of step codes

Step i is a 3-bit code ``2 * axis + sign`` (axis 0..2 for x, y, z; sign 0 for
+1, 1 for -1) stored in bits 3i .. 3i+2 of the code stream, least significant
bit first.  Six directions do not fit in two bits, hence three.
"""

from __future__ import annotations

import struct

import numpy as np

from .lattice import NEIGHBOR_OFFSETS
from .loop_erasure import SelfAvoidingPath
from .walks import LatticePath

MAGIC = b"LRWP"
VERSION = 1
FLAG_LOOP_ERASED = 1
_HEADER = struct.Struct("<4sHHdQ3q")


class PathFormatError(ValueError):
    pass


def encode_steps(points: np.ndarray) -> bytes:
    d = np.diff(np.asarray(points, dtype=np.int64), axis=0)
    if len(d) == 0:
        return b""
    if not (np.abs(d).sum(axis=1) == 1).all():
        raise PathFormatError("path has a non nearest-neighbor step")
    axis = np.argmax(np.abs(d), axis=1)
    sign = (d[np.arange(len(d)), axis] < 0).astype(np.uint8)
    codes = (2 * axis + sign).astype(np.uint8)
    bits = ((codes[:, None] >> np.arange(3, dtype=np.uint8)) & 1).ravel()
    return np.packbits(bits, bitorder="little").tobytes()


def decode_steps(data: bytes, n: int, start) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    if len(bits) < 3 * n:
        raise PathFormatError("truncated step data")
    codes = bits[: 3 * n].reshape(n, 3) @ np.array([1, 2, 4])
    if (codes > 5).any():
        raise PathFormatError("invalid step code")
    pts = np.empty((n + 1, 3), dtype=np.int64)
    pts[0] = start
    pts[1:] = np.asarray(start, dtype=np.int64) + np.cumsum(NEIGHBOR_OFFSETS[codes], axis=0)
    return pts


def dumps(path: LatticePath) -> bytes:
    flags = FLAG_LOOP_ERASED if isinstance(path, SelfAvoidingPath) else 0
    pts = path.points
    head = _HEADER.pack(MAGIC, VERSION, flags, float(path.m), len(pts) - 1, *map(int, pts[0]))
    return head + encode_steps(pts)


def loads(buf: bytes) -> LatticePath:
    if len(buf) < _HEADER.size:
        raise PathFormatError("truncated header")
    magic, version, flags, m, n, x, y, z = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise PathFormatError("bad magic")
    if version != VERSION:
        raise PathFormatError(f"unsupported version {version}")
    pts = decode_steps(buf[_HEADER.size:], n, (x, y, z))
    cls = SelfAvoidingPath if flags & FLAG_LOOP_ERASED else LatticePath
    return cls(pts, m)


def write_path(file, path: LatticePath) -> None:
    with open(file, "wb") as fh:
        fh.write(dumps(path))


def read_path(file) -> LatticePath:
    with open(file, "rb") as fh:
        return loads(fh.read())
