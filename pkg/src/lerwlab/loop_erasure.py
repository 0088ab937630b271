"""Chronological loop-erasure and the LERW / ILERW samplers."""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from . import _hashing as hx
from .lattice import BallDomain
from .rng import SUB_MAIN, SeedSpec
from .sitegrid import cell, site_grid
from .walks import LatticePath, exit_walk

DEFAULT_ILERW_TRUNCATION = 8.0


@dataclass(frozen=True)
class SelfAvoidingPath(LatticePath):
    """Loop-erased path; no site repeats."""

    def is_self_avoiding(self) -> bool:
        return len(np.unique(self.points, axis=0)) == len(self.points)

    def as_walk(self) -> LatticePath:
        return LatticePath(self.points, self.m)


@nb.njit(cache=True)
def loop_erase_indices(pts, n):
    """Indices s_0 < s_1 < ... of the loop-erasure of ``pts[:n]``.

    s_0 is the last visit to pts[0]; s_i is the last visit to pts[s_{i-1} + 1].
    """
    keys, vals, bits = hx.point_set(pts, n)
    out = np.empty(n, dtype=np.int64)
    j = hx.get(keys, vals, bits, hx.pack(pts[0, 0], pts[0, 1], pts[0, 2]))
    out[0] = j
    k = 1
    while j < n - 1:
        j = hx.get(keys, vals, bits, hx.pack(pts[j + 1, 0], pts[j + 1, 1], pts[j + 1, 2]))
        out[k] = j
        k += 1
    return out[:k]


@nb.njit(cache=True)
def loop_erase_points(pts, n):
    idx = loop_erase_indices(pts, n)
    out = np.empty((len(idx), 3), dtype=np.int64)
    for i in range(len(idx)):
        out[i] = pts[idx[i]]
    return out


@nb.njit(cache=True)
def loop_erase_stack(pts, n):
    """Forward stack erasure: append each step, cut back whenever the tip revisits the path."""
    keys, vals, bits = hx.new_table(n)
    out = np.empty((n, 3), dtype=np.int64)
    k = 0
    for i in range(n):
        key = hx.pack(pts[i, 0], pts[i, 1], pts[i, 2])
        j = hx.get(keys, vals, bits, key)
        if j >= 0 and j < k:
            # a popped site keeps its stale slot; stale entries are filtered by j < k and a position check
            if out[j, 0] == pts[i, 0] and out[j, 1] == pts[i, 1] and out[j, 2] == pts[i, 2]:
                k = j + 1
                continue
        out[k] = pts[i]
        hx.put(keys, vals, bits, key, k)
        k += 1
    return out[:k].copy()


def loop_erase(path: LatticePath) -> SelfAvoidingPath:
    """Chronological loop-erasure of a finite path."""
    pts = np.ascontiguousarray(path.points, dtype=np.int64)
    if len(pts) == 0:
        raise ValueError("cannot loop-erase an empty path")
    return SelfAvoidingPath(loop_erase_points(pts, len(pts)), path.m)


@nb.njit(cache=True)
def loop_erase_grid(pts, n, cells, off, nbricks):
    """Same as :func:`loop_erase_points` but with the last-visit map held in a site grid."""
    for i in range(n):
        cells[cell(pts[i, 0], pts[i, 1], pts[i, 2], off, nbricks)] = i
    idx = np.empty(n, dtype=np.int64)
    j = np.int64(cells[cell(pts[0, 0], pts[0, 1], pts[0, 2], off, nbricks)])
    idx[0] = j
    k = 1
    while j < n - 1:
        j = np.int64(cells[cell(pts[j + 1, 0], pts[j + 1, 1], pts[j + 1, 2], off, nbricks)])
        idx[k] = j
        k += 1
    for i in range(n):
        cells[cell(pts[i, 0], pts[i, 1], pts[i, 2], off, nbricks)] = -1
    out = np.empty((k, 3), dtype=np.int64)
    for i in range(k):
        out[i] = pts[idx[i]]
    return out


@nb.njit(cache=True)
def lerw_kernel(st, r2, buf, cells, off, nbricks):
    """Loop-erasure of a walk from the origin stopped on first |p|^2 >= r2.

    Returns ``(eta, buf, n_walk_points)``.
    """
    buf, n = exit_walk(st, 0, 0, 0, r2, buf)
    return loop_erase_grid(buf, n, cells, off, nbricks), buf, n


@nb.njit(cache=True)
def ilerw_kernel(st, r2_inner, r2_outer, buf, cells, off, nbricks):
    """Loop-erasure of a walk cut at |p|^2 >= r2_outer, kept up to its first point with |p|^2 >= r2_inner."""
    buf, n = exit_walk(st, 0, 0, 0, r2_outer, buf)
    eta = loop_erase_grid(buf, n, cells, off, nbricks)
    k = 0
    while k < len(eta):
        p = eta[k]
        if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] >= r2_inner:
            break
        k += 1
    return eta[: k + 1], buf


def lerw_sample(domain: BallDomain, seed: SeedSpec, m: float | None = None, sub: int = SUB_MAIN) -> SelfAvoidingPath:
    """LERW from the origin to the first exit of ``domain`` (an origin-centred ball)."""
    if tuple(domain.center) != (0, 0, 0):
        raise ValueError("LERW domains are centred at the origin")
    g = site_grid(domain.radius)
    eta, _, _ = lerw_kernel(seed.stream(sub), domain.radius**2, np.empty((1024, 3), dtype=np.int64), *g.args())
    return SelfAvoidingPath(eta, domain.radius if m is None else m)


def ilerw_sample(m: float, seed: SeedSpec, truncation: float = DEFAULT_ILERW_TRUNCATION,
                 sub: int = SUB_MAIN) -> SelfAvoidingPath:
    """Infinite LERW near the origin, up to its first exit of radius ``m``.

    The infinite walk is replaced by a walk stopped at radius ``truncation * m``.
    """
    if truncation < 2:
        raise ValueError("truncation factor must be at least 2")
    g = site_grid(truncation * m)
    eta, _ = ilerw_kernel(seed.stream(sub), float(m) ** 2, (truncation * m) ** 2, np.empty((1024, 3), dtype=np.int64),
                          *g.args())
    return SelfAvoidingPath(eta, m)


def contains_point(path: LatticePath, p) -> bool:
    return bool((path.points == np.asarray(p, dtype=np.int64)).all(axis=1).any())
