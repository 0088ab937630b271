"""Discrete potential theory on ball domains.

All fields vanish off the domain (the walk is killed on exit).  Systems are of
the form ``(I - P) u = b`` on the free sites, where ``P`` averages the six
neighbors; that operator is symmetric positive definite, so the default solver
is a matrix-free conjugate gradient.  ``method="dense"`` assembles the matrix
and solves it directly; it is meant as an oracle for small domains.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .lattice import NEIGHBOR_OFFSETS, BallDomain, LatticePoint

TOL = 1e-12
MAX_ITER = 10**6
_EPS = np.finfo(float).eps


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DomainIndex:
    """Site enumeration of a domain with a 6-neighbor table (index N means "outside")."""

    domain: BallDomain
    sites: np.ndarray
    nbr: np.ndarray
    lookup: np.ndarray
    off: int

    def index(self, p) -> int:
        q = np.asarray(p, dtype=np.int64) - np.array(self.domain.center) + self.off
        if (q < 0).any() or (q >= self.lookup.shape[0]).any():
            return -1
        return int(self.lookup[tuple(q)])


@functools.lru_cache(maxsize=16)
def domain_index(domain: BallDomain) -> DomainIndex:
    sites = domain.points()
    r = int(np.ceil(domain.radius)) + 1
    size = 2 * r + 1
    c = np.array(domain.center, dtype=np.int64)
    lookup = np.full((size, size, size), -1, dtype=np.int64)
    q = sites - c + r
    lookup[q[:, 0], q[:, 1], q[:, 2]] = np.arange(len(sites))
    nq = q[:, None, :] + NEIGHBOR_OFFSETS[None, :, :]
    nbr = lookup[nq[..., 0], nq[..., 1], nq[..., 2]]
    nbr[nbr < 0] = len(sites)
    return DomainIndex(domain, sites, nbr, lookup, r)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One value per domain site; zero everywhere off the domain."""

    domain: BallDomain
    values: np.ndarray
    kind: str = "field"
    target: LatticePoint | None = None
    residual: float = 0.0
    iterations: int = 0
    _dense: list = field(default_factory=list, repr=False)

    @property
    def sites(self) -> np.ndarray:
        return domain_index(self.domain).sites

    def value(self, p) -> float:
        i = domain_index(self.domain).index(p)
        return 0.0 if i < 0 else float(self.values[i])

    def __getitem__(self, p) -> float:
        return self.value(p)

    def dense(self) -> tuple[np.ndarray, int]:
        """Values on a cube array (zero off-domain) padded so every neighbor of a site is addressable."""
        if not self._dense:
            ix = domain_index(self.domain)
            c = np.array(self.domain.center, dtype=np.int64)
            if c.any():
                raise ValueError("dense export assumes an origin-centred domain")
            off = ix.off + 1
            size = 2 * off + 1
            grid = np.zeros((size, size, size))
            q = ix.sites + off
            grid[q[:, 0], q[:, 1], q[:, 2]] = self.values
            self._dense.append((grid, off))
        return self._dense[0]

    def harmonic_residual(self, exclude=()) -> np.ndarray:
        """|u(y) - mean of neighbors| at every site not listed in ``exclude``."""
        ix = domain_index(self.domain)
        res = np.abs(_apply(ix, self.values))
        for p in exclude:
            i = ix.index(p)
            if i >= 0:
                res[i] = 0.0
        return res

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "value"])
            for (x, y, z), v in zip(self.sites.tolist(), self.values.tolist()):
                w.writerow([x, y, z, repr(v)])


def _apply(ix: DomainIndex, u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    _stencil(u, ix.nbr, np.ones(len(u), dtype=np.bool_), out)
    return out


@nb.njit(cache=True)
def _stencil(u, nbr, free, out):
    # out = (I - P) u on free sites, 0 elsewhere; returns max |out|
    n = len(u)
    for i in range(n):
        if not free[i]:
            out[i] = 0.0
            continue
        acc = 0.0
        for d in range(6):
            j = nbr[i, d]
            if j < n:
                acc += u[j]
        out[i] = u[i] - acc / 6.0


def _cg(ix: DomainIndex, b: np.ndarray, free: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, float, int]:
    """Conjugate gradient for (I - P) u = b restricted to ``free`` sites (others held at 0)."""
    u = np.zeros_like(b)
    ap = np.empty_like(b)
    r = np.where(free, b, 0.0)
    p = r.copy()
    rs = r @ r
    it = 0
    while it < max_iter:
        res = np.abs(r).max() if len(r) else 0.0
        if res <= max(tol, 8 * _EPS * np.abs(u).max(initial=0.0)):
            # confirm against the true residual; rounding drift can fool the recurrence
            _stencil(u, ix.nbr, free, ap)
            r = np.where(free, b - ap, 0.0)
            res = np.abs(r).max() if len(r) else 0.0
            if res <= max(tol, 8 * _EPS * np.abs(u).max(initial=0.0)):
                return u, res, it
            p = r.copy()
            rs = r @ r
        _stencil(p, ix.nbr, free, ap)
        alpha = rs / (p @ ap)
        u += alpha * p
        r -= alpha * ap
        rs_new = r @ r
        p *= rs_new / rs
        p += r
        rs = rs_new
        it += 1
    raise SolverError(f"no convergence in {max_iter} iterations, residual {np.abs(r).max():.3e}")


def _dense(ix: DomainIndex, b: np.ndarray, free: np.ndarray) -> np.ndarray:
    n = len(ix.sites)
    a = np.eye(n)
    rows = np.repeat(np.arange(n), 6)
    cols = ix.nbr.ravel()
    keep = cols < n
    np.add.at(a, (rows[keep], cols[keep]), -1.0 / 6.0)
    f = np.flatnonzero(free)
    u = np.zeros(n)
    u[f] = np.linalg.solve(a[np.ix_(f, f)], b[f])
    return u


def _solve(domain: BallDomain, b: np.ndarray, free: np.ndarray, method: str, tol: float, max_iter: int):
    ix = domain_index(domain)
    if method == "dense":
        u = _dense(ix, b, free)
        r = np.where(free, b - _apply(ix, u), 0.0)
        return u, float(np.abs(r).max(initial=0.0)), 0
    if method != "cg":
        raise ValueError(f"unknown method {method!r}")
    return _cg(ix, b, free, tol, max_iter)


def hitting_field(domain: BallDomain, target, method: str = "cg", tol: float = TOL,
                  max_iter: int = MAX_ITER) -> ScalarField:
    """h(y) = P^y(reach ``target`` before leaving ``domain``)."""
    ix = domain_index(domain)
    t = ix.index(target)
    if t < 0:
        raise ValueError(f"target {tuple(target)} lies outside the domain")
    n = len(ix.sites)
    free = np.ones(n, dtype=bool)
    free[t] = False
    # the fixed value h(target) = 1 moves to the right-hand side of its neighbors' equations
    b = np.zeros(n)
    nb = ix.nbr[t]
    np.add.at(b, nb[nb < n], 1.0 / 6.0)
    u, res, it = _solve(domain, b, free, method, tol, max_iter)
    u[t] = 1.0
    return ScalarField(domain, u, "hitting", LatticePoint(*map(int, target)), res, it)


def green_function(domain: BallDomain, source, method: str = "cg", tol: float = TOL,
                   max_iter: int = MAX_ITER) -> ScalarField:
    """G(source, y): expected visits to y of the walk from ``source`` killed on exit."""
    ix = domain_index(domain)
    s = ix.index(source)
    if s < 0:
        raise ValueError(f"source {tuple(source)} lies outside the domain")
    b = np.zeros(len(ix.sites))
    b[s] = 1.0
    u, res, it = _solve(domain, b, np.ones(len(b), dtype=bool), method, tol, max_iter)
    return ScalarField(domain, u, "green", LatticePoint(*map(int, source)), res, it)


def exit_time_field(domain: BallDomain, method: str = "cg", tol: float = TOL, max_iter: int = MAX_ITER) -> ScalarField:
    """Expected number of steps to leave ``domain``, from every site."""
    ix = domain_index(domain)
    b = np.ones(len(ix.sites))
    u, res, it = _solve(domain, b, np.ones(len(b), dtype=bool), method, tol, max_iter)
    return ScalarField(domain, u, "exit_time", None, res, it)


def expected_exit_time(domain: BallDomain, start, method: str = "cg") -> float:
    if not domain.contains(start):
        raise ValueError(f"start {tuple(start)} lies outside the domain")
    return exit_time_field(domain, method).value(start)


def exit_distribution(domain: BallDomain, start, method: str = "cg") -> dict[LatticePoint, float]:
    """Law of the first point outside ``domain`` for the walk from ``start``."""
    g = green_function(domain, start, method)
    ix = domain_index(domain)
    out: dict[LatticePoint, float] = {}
    for i, p in enumerate(ix.sites):
        for d, j in enumerate(ix.nbr[i]):
            if j == len(ix.sites):
                z = LatticePoint(*map(int, p + NEIGHBOR_OFFSETS[d]))
                out[z] = out.get(z, 0.0) + g.values[i] / 6.0
    return out
