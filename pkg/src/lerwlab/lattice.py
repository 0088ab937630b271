"""Lattice points, ball domains, dyadic boxes and curve/set metrics.

Points are kept in integer lattice units; the physical position of a lattice
point ``p`` at mesh ``m`` is ``p / m``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

X_HAT = (0.5, 0.0, 0.0)

NEIGHBOR_OFFSETS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int64
)


class LatticePoint(NamedTuple):
    x: int
    y: int
    z: int

    def neighbors(self) -> list["LatticePoint"]:
        return [LatticePoint(self.x + dx, self.y + dy, self.z + dz) for dx, dy, dz in NEIGHBOR_OFFSETS.tolist()]

    def norm2(self) -> int:
        return self.x * self.x + self.y * self.y + self.z * self.z


ORIGIN = LatticePoint(0, 0, 0)


def are_neighbors(a: Sequence[int], b: Sequence[int]) -> bool:
    return sum(abs(int(u) - int(v)) for u, v in zip(a, b)) == 1


def _round_half_down(v: float) -> int:
    # nearest integer, exact halves go toward -inf
    return int(math.ceil(v - 0.5))


def nearest_lattice_point(x: Sequence[float], m: float) -> LatticePoint:
    """Closest point of the mesh-``m`` lattice to the physical point ``x``, in lattice units."""
    if m <= 0:
        raise ValueError("mesh must be positive")
    return LatticePoint(*(_round_half_down(m * float(c)) for c in x))


@dataclass(frozen=True)
class BallDomain:
    """Lattice points strictly inside a Euclidean ball (lattice units)."""

    radius: float
    center: LatticePoint = ORIGIN

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", LatticePoint(*(int(c) for c in self.center)))

    @classmethod
    def unit_ball(cls, m: float) -> "BallDomain":
        """The discretized unit ball at mesh ``m``."""
        return cls(float(m))

    def contains(self, p: Sequence[int]) -> bool:
        d2 = sum((int(a) - b) ** 2 for a, b in zip(p, self.center))
        return d2 < self.radius * self.radius

    __contains__ = contains

    def points(self) -> np.ndarray:
        """All domain points as an ``(N, 3)`` array in lexicographic order."""
        r = int(math.ceil(self.radius))
        ax = np.arange(-r, r + 1, dtype=np.int64)
        g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
        keep = (g * g).sum(axis=1) < self.radius * self.radius
        return g[keep] + np.array(self.center, dtype=np.int64)

    def inner_boundary(self) -> set[LatticePoint]:
        return inner_boundary(self)


def inner_boundary(domain: BallDomain) -> set[LatticePoint]:
    """Domain points with at least one lattice neighbor outside the domain."""
    pts = domain.points()
    if len(pts) == 0:
        return set()
    c = np.array(domain.center, dtype=np.int64)
    r2 = domain.radius * domain.radius
    nb = pts[:, None, :] + NEIGHBOR_OFFSETS[None, :, :] - c
    outside = ((nb * nb).sum(axis=2) >= r2).any(axis=1)
    return {LatticePoint(*map(int, p)) for p in pts[outside]}


@dataclass(frozen=True)
class DyadicBox:
    """Half-open cube prod_i (k_i / 2^n, (k_i + 1) / 2^n] in physical units."""

    scale: int
    k: tuple[int, int, int]

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("scale must be nonnegative")
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))

    @property
    def side(self) -> float:
        return 2.0 ** -self.scale

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.k, dtype=float) * self.side

    @property
    def upper(self) -> np.ndarray:
        return (np.array(self.k, dtype=float) + 1.0) * self.side

    @property
    def center(self) -> np.ndarray:
        return (np.array(self.k, dtype=float) + 0.5) * self.side

    def contains(self, x: Sequence[float]) -> bool:
        lo, hi = self.lower, self.upper
        return all(lo[i] < x[i] <= hi[i] for i in range(3))

    def contains_lattice(self, p: Sequence[int], m: float) -> bool:
        """Membership of the lattice point ``p`` (lattice units, mesh ``m``), exact for integer meshes."""
        return all(box_index(int(c), m, self.scale) == k for c, k in zip(p, self.k))

    def corners(self) -> np.ndarray:
        lo, hi = self.lower, self.upper
        return np.array([[(lo, hi)[b][i] for i, b in enumerate(bits)] for bits in itertools.product((0, 1), repeat=3)])

    def is_interior(self) -> bool:
        """Membership in the nice collection: inside the punctured unit ball, 2^-n away from 0 and the sphere.

        Dyadic intervals never contain 0 in their interior, so the closest and
        farthest points of the closed box from the origin are corners.
        """
        c = np.linalg.norm(self.corners(), axis=1)
        return bool(c.min() >= self.side and 1.0 - c.max() >= self.side)

    def children(self) -> list["DyadicBox"]:
        return dyadic_partition(self, self.scale + 1)


def box_index(coord: int, m: float, scale: int) -> int:
    """Index k with coord/m in (k/2^n, (k+1)/2^n]."""
    if float(m).is_integer():
        num = coord * 2**scale
        den = int(m)
        return -((-num) // den) - 1
    return int(math.ceil(coord * 2.0**scale / m)) - 1


def dyadic_box_of(x: Sequence[float], scale: int) -> DyadicBox:
    return DyadicBox(scale, tuple(int(math.ceil(c * 2.0**scale)) - 1 for c in x))


def dyadic_partition(box: DyadicBox, target_scale: int) -> list[DyadicBox]:
    """The 2^(3 (n1 - n)) boxes of scale ``target_scale`` tiling ``box``."""
    if target_scale < box.scale:
        raise ValueError("target scale must not be coarser than the box scale")
    f = 2 ** (target_scale - box.scale)
    ranges = [range(k * f, (k + 1) * f) for k in box.k]
    return [DyadicBox(target_scale, idx) for idx in itertools.product(*ranges)]


@dataclass(frozen=True)
class GeometryContext:
    """Mesh plus the reference point; helpers for the distance scale d_x and C_x."""

    m: float
    x_hat: tuple[float, float, float] = X_HAT

    def x_hat_lattice(self) -> LatticePoint:
        return nearest_lattice_point(self.x_hat, self.m)

    @staticmethod
    def d_x(x: Sequence[float]) -> float:
        r = float(np.linalg.norm(x))
        return min(r, 1.0 - r)

    @staticmethod
    def c_x(x: Sequence[float], beta: float) -> float:
        r = float(np.linalg.norm(x))
        d = min(r, 1.0 - r)
        if d <= 0:
            raise ValueError("x must lie in the punctured open unit ball")
        return d ** (beta - 3.0) if r <= 0.5 else d ** (beta - 1.0)


def hausdorff_distance(a: Iterable[Sequence[float]], b: Iterable[Sequence[float]]) -> float:
    """Hausdorff distance between two finite point sets (Euclidean)."""
    A = np.asarray(list(a), dtype=float).reshape(-1, 3)
    B = np.asarray(list(b), dtype=float).reshape(-1, 3)
    if len(A) == 0 or len(B) == 0:
        raise ValueError("empty set")
    dab, _ = cKDTree(B).query(A)
    dba, _ = cKDTree(A).query(B)
    return float(max(dab.max(), dba.max()))


@dataclass(frozen=True)
class Curve:
    """Parametrized curve on [0, duration], piecewise linear through equally spaced samples."""

    duration: float
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[None, :]
        if self.duration < 0:
            raise ValueError("duration must be nonnegative")
        object.__setattr__(self, "samples", s)

    @classmethod
    def from_path(cls, points: np.ndarray, m: float, time_per_edge: float) -> "Curve":
        pts = np.asarray(points, dtype=float) / m
        return cls(time_per_edge * (len(pts) - 1), pts)

    def at_fraction(self, s: np.ndarray) -> np.ndarray:
        """Positions at times ``s * duration`` for fractions ``s`` in [0, 1]."""
        n = len(self.samples) - 1
        if n == 0:
            return np.repeat(self.samples, len(s), axis=0)
        u = np.clip(np.asarray(s, dtype=float), 0.0, 1.0) * n
        i = np.minimum(np.floor(u).astype(np.int64), n - 1)
        t = (u - i)[:, None]
        return (1.0 - t) * self.samples[i] + t * self.samples[i + 1]


def rho_distance(c1: Curve | tuple[float, Callable], c2: Curve | tuple[float, Callable], grid: int = 2**10 + 1) -> float:
    """|T2 - T1| + max over a uniform grid of s in [0, 1] of |c1(s T1) - c2(s T2)|.

    Curves are either :class:`Curve` objects or ``(duration, f)`` pairs where
    ``f`` maps an array of fractions to an ``(k, 3)`` array of positions.  For
    Lipschitz curves the grid maximum underestimates the supremum by at most
    ``(L1 T1 + L2 T2) / (grid - 1)``.
    """
    s = np.linspace(0.0, 1.0, grid)

    def unpack(c):
        if isinstance(c, Curve):
            return c.duration, c.at_fraction(s)
        T, f = c
        return float(T), np.asarray(f(s), dtype=float)

    t1, p1 = unpack(c1)
    t2, p2 = unpack(c2)
    return abs(t2 - t1) + float(np.linalg.norm(p1 - p2, axis=1).max())
