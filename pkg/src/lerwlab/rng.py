"""Counter-based random streams.

Every trial draws from a Philox4x32-10 stream whose key is derived from the
experiment seed (plus a substream id) and whose counter space is indexed by the
trial number.  A trial's randomness is therefore a pure function of
``(experiment_seed, trial_index, substream)`` and trials can be evaluated in any
order, on any worker.

The stream state is a small ``uint64`` array so it can be threaded through
numba kernels:

    0  philox key (two 32-bit words)
    1  trial index (high half of the counter)
    2  block counter (low half of the counter)
    3  cached second 64-bit word of the last block
    4  1 if slot 3 holds an unused word
    5  bit buffer for small draws
    6  number of valid bits in slot 5
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint64(0x9E3779B9)
_PHILOX_W1 = np.uint64(0xBB67AE85)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U32 = np.uint64(32)
_ONE = np.uint64(1)
_ZERO = np.uint64(0)
_TWO_M53 = 1.0 / 9007199254740992.0

STATE_SIZE = 7

# substream ids used across the package; one id per independent walk in a trial
SUB_MAIN = 0
SUB_SECOND = 1
SUB_THIRD = 2


@nb.njit(cache=True)
def splitmix64(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32 with 10 rounds; all arguments are 32-bit values held in uint64."""
    for r in range(10):
        if r > 0:
            k0 = (k0 + _PHILOX_W0) & _MASK32
            k1 = (k1 + _PHILOX_W1) & _MASK32
        p0 = _PHILOX_M0 * c0
        p1 = _PHILOX_M1 * c2
        hi0 = p0 >> _U32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _U32
        lo1 = p1 & _MASK32
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
    return c0, c1, c2, c3


@nb.njit(cache=True)
def stream_key(seed, sub):
    return splitmix64(splitmix64(np.uint64(seed)) ^ (np.uint64(sub) * _GOLDEN))


@nb.njit(cache=True)
def new_stream(seed, trial, sub):
    st = np.zeros(STATE_SIZE, dtype=np.uint64)
    st[0] = stream_key(seed, sub)
    st[1] = np.uint64(trial)
    return st


@nb.njit(cache=True)
def next_u64(st):
    if st[4] == _ONE:
        st[4] = _ZERO
        return st[3]
    ctr = st[2]
    trial = st[1]
    key = st[0]
    o0, o1, o2, o3 = philox4x32(ctr & _MASK32, ctr >> _U32, trial & _MASK32,
                                trial >> _U32, key & _MASK32, key >> _U32)
    st[2] = ctr + _ONE
    st[3] = o2 | (o3 << _U32)
    st[4] = _ONE
    return o0 | (o1 << _U32)


@nb.njit(cache=True)
def next_double(st):
    """Uniform double in [0, 1) with 53 random bits."""
    return (next_u64(st) >> np.uint64(11)) * _TWO_M53


@nb.njit(cache=True)
def next_direction(st):
    """Uniform integer in 0..5 from 3-bit chunks, rejecting 6 and 7."""
    while True:
        if st[6] < np.uint64(3):
            st[5] = next_u64(st)
            st[6] = np.uint64(63)
        v = st[5] & np.uint64(7)
        st[5] = st[5] >> np.uint64(3)
        st[6] = st[6] - np.uint64(3)
        if v < np.uint64(6):
            return np.int64(v)


@dataclass(frozen=True)
class SeedSpec:
    """Identifies the random stream of one trial."""

    experiment_seed: int
    trial_index: int

    def __post_init__(self):
        for name in ("experiment_seed", "trial_index"):
            v = getattr(self, name)
            if not 0 <= v < 2**64:
                raise ValueError(f"{name} must fit in an unsigned 64-bit integer, got {v}")

    def stream(self, sub: int = SUB_MAIN) -> np.ndarray:
        return new_stream(np.uint64(self.experiment_seed), np.uint64(self.trial_index), sub)


def philox_block(counter: tuple[int, int, int, int], key: tuple[int, int]) -> tuple[int, ...]:
    """Raw Philox4x32-10 block, exposed for known-answer tests."""
    out = philox4x32(*(np.uint64(c) for c in counter), *(np.uint64(k) for k in key))
    return tuple(int(o) for o in out)


def uniform_doubles(seed: SeedSpec, n: int, sub: int = SUB_MAIN) -> np.ndarray:
    st = seed.stream(sub)
    return np.array([next_double(st) for _ in range(n)])
