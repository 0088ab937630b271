"""Simple random walks on Z^3: stopped at exit, at a target, conditioned, transient."""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .lattice import NEIGHBOR_OFFSETS, BallDomain, LatticePoint
from .rng import SUB_MAIN, SeedSpec, next_double, next_u64

_DX = NEIGHBOR_OFFSETS[:, 0].copy()
_DY = NEIGHBOR_OFFSETS[:, 1].copy()
_DZ = NEIGHBOR_OFFSETS[:, 2].copy()

INITIAL_CAPACITY = 1024


@dataclass(frozen=True)
class LatticePath:
    """Nearest-neighbor path; ``points`` is an ``(n + 1, 3)`` int64 array in lattice units."""

    points: np.ndarray
    m: float = 1.0

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.int64).reshape(-1, 3))
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return max(len(self.points) - 1, 0)

    @property
    def start(self) -> LatticePoint:
        return LatticePoint(*map(int, self.points[0]))

    @property
    def end(self) -> LatticePoint:
        return LatticePoint(*map(int, self.points[-1]))

    def is_nearest_neighbor(self) -> bool:
        if len(self.points) < 2:
            return True
        return bool((np.abs(np.diff(self.points, axis=0)).sum(axis=1) == 1).all())

    def physical(self) -> np.ndarray:
        return self.points / self.m


@nb.njit(cache=True)
def grow(buf):
    out = np.empty((buf.shape[0] * 2, 3), dtype=np.int64)
    out[: buf.shape[0]] = buf
    return out


@nb.njit(cache=True)
def _advance(st, x, y, z, n, buf, cx, cy, cz, r2, tx, ty, tz, use_target, bits, nbits):
    # runs until the buffer is full (status 0), the target is hit (1) or the ball is left (2)
    cap = buf.shape[0]
    while n < cap:
        if nbits < 3:
            bits = next_u64(st)
            nbits = 63
        v = np.int64(bits & np.uint64(7))
        bits >>= np.uint64(3)
        nbits -= 3
        if v >= 6:
            continue
        x += _DX[v]
        y += _DY[v]
        z += _DZ[v]
        buf[n, 0] = x
        buf[n, 1] = y
        buf[n, 2] = z
        n += 1
        if use_target and x == tx and y == ty and z == tz:
            return x, y, z, n, 1, bits, nbits
        ax = x - cx
        ay = y - cy
        az = z - cz
        if ax * ax + ay * ay + az * az >= r2:
            return x, y, z, n, 2, bits, nbits
    return x, y, z, n, 0, bits, nbits


@nb.njit(cache=True)
def walk_kernel(st, x, y, z, cx, cy, cz, r2, tx, ty, tz, use_target, buf):
    """Walk from (x, y, z) until |p - c|^2 >= r2 or, if ``use_target``, p == t.

    Returns ``(buf, n_points, hit)``; ``buf`` may be reallocated.
    """
    buf[0, 0] = x
    buf[0, 1] = y
    buf[0, 2] = z
    if use_target and x == tx and y == ty and z == tz:
        return buf, 1, True
    n = 1
    bits = np.uint64(0)
    nbits = 0
    while True:
        x, y, z, n, status, bits, nbits = _advance(st, x, y, z, n, buf, cx, cy, cz, r2, tx, ty, tz,
                                                   use_target, bits, nbits)
        if status == 1:
            return buf, n, True
        if status == 2:
            return buf, n, False
        buf = grow(buf)


@nb.njit(cache=True)
def exit_walk(st, x, y, z, r2, buf):
    """Walk from (x, y, z) until first |p|^2 >= r2 (ball centered at the origin)."""
    buf, n, _ = walk_kernel(st, x, y, z, 0, 0, 0, r2, 0, 0, 0, False, buf)
    return buf, n


@nb.njit(cache=True)
def conditioned_kernel(st, h, off, x, y, z, tx, ty, tz, buf):
    """Doob h-transform walk: from y move to neighbor z with probability h(z) / sum of neighbor h."""
    buf[0, 0] = x
    buf[0, 1] = y
    buf[0, 2] = z
    n = 1
    w = np.empty(6)
    while not (x == tx and y == ty and z == tz):
        total = 0.0
        for d in range(6):
            v = h[x + _DX[d] + off, y + _DY[d] + off, z + _DZ[d] + off]
            w[d] = v
            total += v
        u = next_double(st) * total
        d = 0
        acc = w[0]
        while acc <= u and d < 5:
            d += 1
            acc += w[d]
        while w[d] == 0.0:
            d -= 1
        x += _DX[d]
        y += _DY[d]
        z += _DZ[d]
        if n >= buf.shape[0]:
            buf = grow(buf)
        buf[n, 0] = x
        buf[n, 1] = y
        buf[n, 2] = z
        n += 1
    return buf, n


def _buffer() -> np.ndarray:
    return np.empty((INITIAL_CAPACITY, 3), dtype=np.int64)


def _check_inside(domain: BallDomain, p, what: str):
    if not domain.contains(p):
        raise ValueError(f"{what} {tuple(p)} lies outside the domain")


def srw_until_exit(domain: BallDomain, start, seed: SeedSpec, m: float = 1.0, sub: int = SUB_MAIN) -> LatticePath:
    """Simple random walk from ``start`` up to and including its first point outside ``domain``."""
    _check_inside(domain, start, "start")
    cx, cy, cz = domain.center
    buf, n, _ = walk_kernel(seed.stream(sub), *map(int, start), cx, cy, cz, domain.radius**2, 0, 0, 0, False, _buffer())
    return LatticePath(buf[:n].copy(), m)


def srw_until_hit_or_exit(domain: BallDomain, start, target, seed: SeedSpec, m: float = 1.0,
                          sub: int = SUB_MAIN) -> tuple[LatticePath, bool]:
    """Walk stopped at the first of: reaching ``target``, leaving ``domain``."""
    _check_inside(domain, start, "start")
    _check_inside(domain, target, "target")
    cx, cy, cz = domain.center
    buf, n, hit = walk_kernel(seed.stream(sub), *map(int, start), cx, cy, cz, domain.radius**2,
                              *map(int, target), True, _buffer())
    return LatticePath(buf[:n].copy(), m), bool(hit)


def conditioned_walk(domain: BallDomain, start, target, h, seed: SeedSpec, m: float = 1.0,
                     sub: int = SUB_MAIN) -> LatticePath:
    """Walk from ``start`` conditioned to reach ``target`` before leaving ``domain``.

    ``h`` is the hitting field of ``target`` (see :func:`lerwlab.harmonic.hitting_field`);
    the walk moves by the h-transformed kernel and stops on arrival at ``target``.
    """
    _check_inside(domain, start, "start")
    _check_inside(domain, target, "target")
    if tuple(h.target) != tuple(target) or h.domain != domain:
        raise ValueError("h must be the hitting field of target on this domain")
    if h.value(start) <= 0.0:
        raise ValueError("unreachable conditioning: h(start) = 0")
    grid, off = h.dense()
    buf, n = conditioned_kernel(seed.stream(sub), grid, off, *map(int, start), *map(int, target), _buffer())
    return LatticePath(buf[:n].copy(), m)


def srw_transient(start, stop_radius: float, seed: SeedSpec, m: float = 1.0, sub: int = SUB_MAIN) -> LatticePath:
    """Unconstrained walk cut at its first exit of the origin-centred ball of ``stop_radius``.

    Stands in for the infinite walk when the radius is much larger than the
    region of interest.
    """
    s = np.asarray(start, dtype=np.int64)
    if not stop_radius**2 > float(s @ s):
        raise ValueError("stop_radius must exceed |start|")
    buf, n = exit_walk(seed.stream(sub), *map(int, s), float(stop_radius) ** 2, _buffer())
    return LatticePath(buf[:n].copy(), m)
