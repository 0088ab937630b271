# Open-addressing hash tables keyed by packed lattice coordinates, for numba kernels.
import numba as nb
import numpy as np

_OFF = np.int64(1 << 20)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
EMPTY = np.int64(-1)


@nb.njit(cache=True, inline="always")
def pack(x, y, z):
    # coordinates must lie in (-2^20, 2^20)
    return ((x + _OFF) << np.int64(42)) | ((y + _OFF) << np.int64(21)) | (z + _OFF)


@nb.njit(cache=True)
def table_bits(n):
    b = 4
    while (1 << b) < 2 * n:
        b += 1
    return b


@nb.njit(cache=True)
def new_table(n):
    bits = table_bits(n)
    keys = np.full(1 << bits, EMPTY, dtype=np.int64)
    vals = np.empty(1 << bits, dtype=np.int64)
    return keys, vals, bits


@nb.njit(cache=True, inline="always")
def _home(key, bits):
    return np.int64((np.uint64(key) * _GOLD) >> np.uint64(64 - bits))


@nb.njit(cache=True)
def put(keys, vals, bits, key, val):
    mask = (np.int64(1) << bits) - 1
    i = _home(key, bits)
    while True:
        k = keys[i]
        if k == key or k == EMPTY:
            keys[i] = key
            vals[i] = val
            return
        i = (i + 1) & mask


@nb.njit(cache=True)
def get(keys, vals, bits, key):
    mask = (np.int64(1) << bits) - 1
    i = _home(key, bits)
    while True:
        k = keys[i]
        if k == key:
            return vals[i]
        if k == EMPTY:
            return EMPTY
        i = (i + 1) & mask


@nb.njit(cache=True)
def point_set(pts, n):
    """Hash table mapping each of the first ``n`` points to its last index."""
    keys, vals, bits = new_table(n)
    for i in range(n):
        put(keys, vals, bits, pack(pts[i, 0], pts[i, 1], pts[i, 2]), i)
    return keys, vals, bits
