"""Monte Carlo estimators for LERW hitting probabilities, lengths and measures.

Every estimator is a driver around a pure batch kernel that maps a contiguous
range of trial indices to a matrix of integer observations (one row per
trial).  Rows are reduced into :class:`Moments`, whose sums are exact
integers, so results do not depend on how trials were split across chunks or
workers.  Estimates are scaled from those sums at the very end.
"""

from __future__ import annotations

import contextlib
import functools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _mc
from .calibration import default_beta
from .harmonic import green_function, hitting_field
from .lattice import X_HAT, BallDomain, DyadicBox, LatticePoint, box_index, nearest_lattice_point
from .loop_erasure import DEFAULT_ILERW_TRUNCATION, SelfAvoidingPath
from .sitegrid import site_grid

CHUNK = 2048
MINKOWSKI_PITCH_DIVISOR = 8
CODE_VERSION = "0.1.0"


class PreconditionError(ValueError):
    """An estimator was asked for something outside its validity range."""


# ---------------------------------------------------------------- accumulation


@dataclass
class Moments:
    """Exact first and second moments of integer observation vectors."""

    n: int
    s1: list
    s2: list

    @classmethod
    def empty(cls, dim: int) -> "Moments":
        return cls(0, [0] * dim, [[0] * dim for _ in range(dim)])

    @classmethod
    def of(cls, obs: np.ndarray) -> "Moments":
        obs = np.asarray(obs, dtype=np.int64)
        s1 = obs.sum(axis=0)
        s2 = obs.T @ obs
        return cls(len(obs), [int(v) for v in s1], [[int(v) for v in row] for row in s2])

    @property
    def dim(self) -> int:
        return len(self.s1)

    def merge(self, other: "Moments") -> "Moments":
        if other.dim != self.dim:
            raise ValueError("cannot merge moments of different dimension")
        return Moments(
            self.n + other.n,
            [a + b for a, b in zip(self.s1, other.s1)],
            [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(self.s2, other.s2)],
        )

    def mean(self, i: int) -> float:
        return self.s1[i] / self.n

    def cov(self, i: int, j: int) -> float:
        # unbiased sample covariance; integer arithmetic until the final (correctly rounded) division
        if self.n < 2:
            return 0.0
        return (self.n * self.s2[i][j] - self.s1[i] * self.s1[j]) / (self.n * (self.n - 1))

    def stderr(self, i: int) -> float:
        return math.sqrt(max(self.cov(i, i), 0.0) / self.n) if self.n else 0.0

    def ratio(self, i: int, j: int) -> tuple[float, float]:
        """mean_i / mean_j with a delta-method standard error (shared trials)."""
        a, b = self.mean(i), self.mean(j)
        if b == 0:
            return math.nan, math.nan
        r = a / b
        var = (self.cov(i, i) - 2 * r * self.cov(i, j) + r * r * self.cov(j, j)) / (b * b * self.n)
        return r, math.sqrt(max(var, 0.0))

    def to_json(self) -> dict:
        return {"n": self.n, "s1": self.s1, "s2": self.s2}

    @classmethod
    def from_json(cls, d: dict) -> "Moments":
        return cls(int(d["n"]), [int(v) for v in d["s1"]], [[int(v) for v in r] for r in d["s2"]])


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n_trials: int
    seed: int
    descriptor: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_moments(cls, mom: Moments, col: int, seed: int, descriptor: str, params: dict | None = None,
                     scale: float = 1.0) -> "Estimate":
        return cls(scale * mom.mean(col), abs(scale) * mom.stderr(col), mom.n, seed, descriptor, dict(params or {}))

    @property
    def relative_stderr(self) -> float:
        return self.stderr / abs(self.mean) if self.mean else math.inf

    def ci(self, z: float = 1.959963984540054) -> tuple[float, float]:
        return self.mean - z * self.stderr, self.mean + z * self.stderr

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- trial tasks


def _grid_for(radius: float):
    return site_grid(radius).args()


@dataclass(frozen=True)
class LerwTask:
    """Observations of LERW (or truncated ILERW) trials.

    Columns: [length, one indicator per target, one per ball, one per product].
    ``products`` index into the indicator columns (target columns first, then balls).
    """

    m: float
    targets: tuple = ()
    balls: tuple = ()  # ((cx, cy, cz) in lattice units, radius in lattice units)
    products: tuple = ()
    truncation: float | None = None
    sub: int = 0

    @property
    def dim(self) -> int:
        return 1 + len(self.targets) + len(self.balls) + len(self.products)

    def __call__(self, seed: int, t0: int, t1: int) -> np.ndarray:
        tg = np.array(self.targets, dtype=np.int64).reshape(-1, 3)
        ce = np.array([b[0] for b in self.balls], dtype=np.float64).reshape(-1, 3)
        rad2 = np.array([float(b[1]) ** 2 for b in self.balls], dtype=np.float64)
        r2 = float(self.m) ** 2
        outer = r2 if self.truncation is None else (self.truncation * self.m) ** 2
        reach = self.m if self.truncation is None else self.truncation * self.m
        obs = _mc.lerw_trials(np.uint64(seed), np.uint64(t0), np.uint64(t1), self.sub, r2, outer, tg, ce, rad2,
                              *_grid_for(reach))
        if self.products:
            extra = np.stack([np.prod(obs[:, [1 + c for c in cols]], axis=1) for cols in self.products], axis=1)
            obs = np.concatenate([obs, extra], axis=1)
        return obs


@dataclass(frozen=True)
class EsTask:
    m: float

    dim = 1

    def __call__(self, seed: int, t0: int, t1: int) -> np.ndarray:
        return _mc.es_trials(np.uint64(seed), np.uint64(t0), np.uint64(t1), float(self.m) ** 2, *_grid_for(self.m))


@functools.lru_cache(maxsize=8)
def _hitting_origin(radius: float):
    return hitting_field(BallDomain(radius), (0, 0, 0))


@dataclass(frozen=True)
class DecomposeTask:
    radius: float
    x: tuple

    dim = 1

    def __call__(self, seed: int, t0: int, t1: int) -> np.ndarray:
        grid, off = _hitting_origin(self.radius).dense()
        return _mc.decompose_trials(np.uint64(seed), np.uint64(t0), np.uint64(t1), grid, off, *self.x,
                                    float(self.radius) ** 2, *_grid_for(self.radius))


@dataclass(frozen=True)
class BoxTask:
    """Occupation counts of lattice boxes, neighborhood-volume grid counts and a target indicator."""

    m: float
    lattice_boxes: tuple  # ((lo_x, lo_y, lo_z), (hi_x, hi_y, hi_z)) inclusive integer bounds
    volumes: tuple  # (lower(3), upper(3), r, pitch) in physical units
    target: tuple

    @property
    def dim(self) -> int:
        return len(self.lattice_boxes) + len(self.volumes) + 1

    def __call__(self, seed: int, t0: int, t1: int) -> np.ndarray:
        lo = np.array([b[0] for b in self.lattice_boxes], dtype=np.int64).reshape(-1, 3)
        hi = np.array([b[1] for b in self.lattice_boxes], dtype=np.int64).reshape(-1, 3)
        vlo = np.array([v[0] for v in self.volumes], dtype=np.float64).reshape(-1, 3)
        vhi = np.array([v[1] for v in self.volumes], dtype=np.float64).reshape(-1, 3)
        vr = np.array([v[2] for v in self.volumes], dtype=np.float64)
        vp = np.array([v[3] for v in self.volumes], dtype=np.float64)
        return _mc.box_trials(np.uint64(seed), np.uint64(t0), np.uint64(t1), float(self.m) ** 2, float(self.m),
                              lo, hi, vlo, vhi, vr, vp, np.array(self.target, dtype=np.int64), *_grid_for(self.m))


def _run_chunk(args) -> Moments:
    task, seed, t0, t1 = args
    return Moments.of(task(seed, t0, t1))


_shared_pool: list = []


@contextlib.contextmanager
def worker_pool(workers: int):
    """Share one process pool among all ``run_trials`` calls inside the block."""
    if workers <= 1:
        yield None
        return
    with ProcessPoolExecutor(max_workers=workers) as ex:
        _shared_pool.append(ex)
        try:
            yield ex
        finally:
            _shared_pool.pop()


def run_trials(task, seed: int, trials: int, workers: int = 1, offset: int = 0, chunk: int = CHUNK) -> Moments:
    """Evaluate trials ``offset .. offset + trials - 1`` of ``task`` and reduce them exactly.

    Chunks are reduced in index order, though with integer sums the order cannot matter.
    """
    if trials < 1:
        raise PreconditionError("trials must be at least 1")
    if not 0 <= seed < 2**64:
        raise PreconditionError("seed must fit in an unsigned 64-bit integer")
    jobs = [(task, seed, t, min(t + chunk, offset + trials)) for t in range(offset, offset + trials, chunk)]
    acc = Moments.empty(task.dim)
    if workers <= 1 or len(jobs) == 1:
        for j in jobs:
            acc = acc.merge(_run_chunk(j))
        return acc
    if _shared_pool:
        parts = _shared_pool[-1].map(_run_chunk, jobs)
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, jobs))
    for part in parts:
        acc = acc.merge(part)
    return acc


# ---------------------------------------------------------------- estimators


def _check_in_ball(x, what="x"):
    if float(np.linalg.norm(x)) >= 1.0:
        raise PreconditionError(f"{what} = {tuple(x)} lies outside the unit ball")


def estimate_one_point(x: Sequence[float], m: float, trials: int, seed: int, workers: int = 1, offset: int = 0,
                       truncation: float | None = None) -> Estimate:
    """P(x_m on eta_m), with x_m the lattice point nearest to m x.

    With ``truncation`` set the curve is the ILERW (walk cut at radius truncation * m).
    """
    _check_in_ball(x)
    if truncation is not None and truncation < 2:
        raise PreconditionError("truncation factor must be at least 2")
    p = nearest_lattice_point(x, m)
    name = "one_point" if truncation is None else "one_point_ilerw"
    params = {"x": list(map(float, x)), "m": m, "lattice_point": list(p)}
    if truncation is not None:
        params["truncation"] = truncation
    mom = run_trials(LerwTask(m, (tuple(p),), truncation=truncation), seed, trials, workers, offset)
    return Estimate.from_moments(mom, 1, seed, name, params)


def mean_length(m: float, trials: int, seed: int, workers: int = 1, offset: int = 0) -> Estimate:
    """Mean number of steps of eta_m (lattice units)."""
    mom = run_trials(LerwTask(m), seed, trials, workers, offset)
    return Estimate.from_moments(mom, 0, seed, "length", {"m": m})


def _ball_checks(x, r: float, m: float):
    d = float(np.linalg.norm(x))
    if not r < min(d, 1.0 - d) / 2:
        raise PreconditionError(f"radius {r} too large for x at distance {d:.4g} (need r < min(|x|, 1-|x|)/2)")
    if m * r < 4:
        raise PreconditionError(f"mesh too coarse: m r = {m * r:.4g} < 4")


def estimate_ball_hit_profile(x: Sequence[float], radii: Sequence[float], m: float, trials: int, seed: int,
                              workers: int = 1, offset: int = 0) -> list[Estimate]:
    """P(dist(eta_m, x) <= r) for every r, on shared trials (nested events)."""
    for r in radii:
        _ball_checks(x, r, m)
    c = tuple(float(v) * m for v in x)
    task = LerwTask(m, balls=tuple((c, r * m) for r in radii))
    mom = run_trials(task, seed, trials, workers, offset)
    return [Estimate.from_moments(mom, 1 + i, seed, "ball_hit", {"x": list(map(float, x)), "r": r, "m": m})
            for i, r in enumerate(radii)]


def estimate_ball_hit(x: Sequence[float], r: float, m: float, trials: int, seed: int, workers: int = 1,
                      offset: int = 0) -> Estimate:
    return estimate_ball_hit_profile(x, [r], m, trials, seed, workers, offset)[0]


def estimate_two_point(z: Sequence[float], w: Sequence[float], m: float, trials: int, seed: int, mode: str = "point",
                       r: float | None = None, r_prime: float | None = None, workers: int = 1,
                       offset: int = 0) -> Estimate:
    """Joint hitting frequency of two points (``mode="point"``) or two balls (``mode="ball"``)."""
    _check_in_ball(z, "z")
    _check_in_ball(w, "w")
    sep = float(np.linalg.norm(np.subtract(z, w)))
    if sep == 0:
        raise PreconditionError("z and w must differ")
    params = {"z": list(map(float, z)), "w": list(map(float, w)), "m": m, "mode": mode}
    if mode == "point":
        pz, pw = nearest_lattice_point(z, m), nearest_lattice_point(w, m)
        if pz == pw:
            raise PreconditionError("z and w round to the same lattice point")
        task = LerwTask(m, (tuple(pz), tuple(pw)), products=((0, 1),))
    elif mode == "ball":
        if r is None:
            raise PreconditionError("ball mode needs a radius")
        rp = r if r_prime is None else r_prime
        if not max(r, rp) < sep / 2:
            raise PreconditionError(f"balls of radius {max(r, rp)} are not separated at |z - w| = {sep:.4g}")
        if m * min(r, rp) < 1:
            raise PreconditionError("mesh too coarse for the requested radii")
        task = LerwTask(m, balls=((tuple(v * m for v in z), r * m), (tuple(v * m for v in w), rp * m)),
                        products=((0, 1),))
        params.update(r=r, r_prime=rp)
    else:
        raise PreconditionError(f"unknown mode {mode!r}")
    mom = run_trials(task, seed, trials, workers, offset)
    return Estimate.from_moments(mom, 3, seed, "two_point", params)


def estimate_es(m_lattice: float, trials: int, seed: int, workers: int = 1, offset: int = 0) -> Estimate:
    """P(LE(S[0, T_m]) and S'[1, T'_m] do not intersect), S, S' independent walks from 0."""
    if m_lattice < 1:
        raise PreconditionError("m must be at least 1")
    mom = run_trials(EsTask(m_lattice), seed, trials, workers, offset)
    return Estimate.from_moments(mom, 0, seed, "es", {"m": m_lattice})


def decompose_one_point(domain: BallDomain, x, trials: int, seed: int, h=None, G=None, workers: int = 1,
                        offset: int = 0) -> Estimate:
    """P(x on LE of the walk from 0 killed on exit) as G(0, x) * P(LE(X) and Y[1, T] disjoint).

    X runs from x conditioned to hit 0 before exiting, Y is a free walk from x
    stopped on exit.  ``h`` and ``G`` default to the exact fields of the domain.
    """
    if tuple(domain.center) != (0, 0, 0):
        raise PreconditionError("domain must be centred at the origin")
    x = LatticePoint(*map(int, x))
    if not domain.contains(x):
        raise PreconditionError(f"x = {tuple(x)} lies outside the domain")
    params = {"radius": domain.radius, "x": list(x)}
    if x == (0, 0, 0):
        return Estimate(1.0, 0.0, trials, seed, "decompose", params)
    if h is not None and (tuple(h.target) != (0, 0, 0) or h.domain != domain):
        raise PreconditionError("h must be the hitting field of 0 on this domain")
    G = green_function(domain, (0, 0, 0)) if G is None else G
    g = G.value(x)
    mom = run_trials(DecomposeTask(float(domain.radius), tuple(x)), seed, trials, workers, offset)
    params["green"] = g
    return Estimate.from_moments(mom, 0, seed, "decompose", params, scale=g)


# ---------------------------------------------------------------- measures


@dataclass(frozen=True)
class OccupationMeasure:
    m: float
    box_scale: int
    counts: dict  # DyadicBox -> number of eta sites in the box
    normalization: str = "explicit"
    beta: float | None = None
    f_m: float | None = None

    def mass(self, box: DyadicBox) -> float:
        c = self.counts.get(box, 0)
        if self.normalization == "reference":
            return c / self.f_m
        return c * self.m ** (-self.beta)

    @property
    def total_count(self) -> int:
        return sum(self.counts.values())


def occupation_measure(eta: SelfAvoidingPath, box_scale: int, normalization: str = "explicit",
                       beta: float | None = None, f_m: float | None = None) -> OccupationMeasure:
    """Site counts of eta (inside the open unit ball) per dyadic box of the given scale.

    ``normalization="explicit"`` weights each site by m^-beta; ``"reference"``
    divides by f_m = m^3 P(x_hat_m on eta_m), which the caller supplies.
    """
    if normalization == "explicit":
        beta = default_beta() if beta is None else beta
    elif normalization == "reference":
        if f_m is None or f_m <= 0:
            raise PreconditionError("reference normalization needs a positive f_m")
    else:
        raise PreconditionError(f"unknown normalization {normalization!r}")
    m = eta.m
    counts: dict = {}
    for p in eta.points.tolist():
        if p[0] ** 2 + p[1] ** 2 + p[2] ** 2 >= m * m:
            continue
        box = DyadicBox(box_scale, tuple(box_index(c, m, box_scale) for c in p))
        counts[box] = counts.get(box, 0) + 1
    return OccupationMeasure(m, box_scale, counts, normalization, beta, f_m)


def lattice_bounds(box: DyadicBox, m: float) -> tuple[tuple, tuple]:
    """Inclusive integer bounds of the lattice points p with p / m in ``box``."""
    if not float(m).is_integer():
        raise PreconditionError("lattice box bounds need an integer mesh")
    m = int(m)
    f = 2**box.scale
    lo = tuple((k * m) // f + 1 for k in box.k)
    hi = tuple(((k + 1) * m) // f for k in box.k)
    return lo, hi


@dataclass(frozen=True)
class MinkowskiSample:
    s: int
    box: DyadicBox
    J: float
    beta: float
    volume: float
    pitch: float


def _minkowski_checks(box: DyadicBox, s: int, m: float):
    if 2.0**-s < 4.0 / m:
        raise PreconditionError(f"resolution too fine: 2^-{s} < 4 / m")
    if not box.is_interior():
        raise PreconditionError(f"{box} is not an interior dyadic box")


def neighborhood_volume(points_phys: np.ndarray, lower, upper, r: float, pitch: float) -> float:
    pts = np.ascontiguousarray(points_phys, dtype=np.float64).reshape(-1, 3)
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)
    return _mc.neighborhood_count(pts, lo, hi, float(r), float(pitch)) * pitch**3


def minkowski_content(eta, box: DyadicBox, s: int, beta: float | None = None,
                      pitch_divisor: int = MINKOWSKI_PITCH_DIVISOR, m: float | None = None) -> MinkowskiSample:
    """J = 2^((3 - beta) s) Vol(B(eta, 2^-s) within the box), volume from a grid of pitch 2^-s / pitch_divisor.

    ``eta`` is a path (its mesh is used) or an array of physical points with ``m`` given.
    """
    if isinstance(eta, SelfAvoidingPath) or hasattr(eta, "physical"):
        m = eta.m if m is None else m
        pts = eta.physical()
    else:
        pts = np.asarray(eta, dtype=np.float64)
        if m is None:
            raise PreconditionError("a mesh is required for raw point input")
    _minkowski_checks(box, s, m)
    beta = default_beta() if beta is None else beta
    r = 2.0**-s
    pitch = r / pitch_divisor
    vol = neighborhood_volume(pts, box.lower, box.upper, r, pitch)
    return MinkowskiSample(s, box, 2.0 ** ((3 - beta) * s) * vol, beta, vol, pitch)


# ---------------------------------------------------------------- decoupling


def decoupling_ratio(shape, m: float, trials: int, seed: int, x: Sequence[float] = X_HAT, workers: int = 1,
                     offset: int = 0) -> Estimate:
    """a_m(S) = P(S(x_hat) meets eta) / P(x_hat in eta), both from the same trials.

    ``shape`` is ``"point"`` (the singleton, ratio exactly 1) or a physical ball radius.
    """
    p = nearest_lattice_point(x, m)
    if shape == "point":
        balls = ((tuple(map(float, p)), 0.0),)
    else:
        r = float(shape)
        d = float(np.linalg.norm(x))
        if not 0 < 4 * r < min(d, 1 - d):
            raise PreconditionError("ball does not fit the small-box constraint around x")
        balls = ((tuple(map(float, p)), r * m),)
    mom = run_trials(LerwTask(m, (tuple(p),), balls), seed, trials, workers, offset)
    a, se = mom.ratio(2, 1)
    return Estimate(a, se, mom.n, seed, "decoupling_ratio", {"shape": shape, "m": m, "x": list(map(float, x))})


@dataclass(frozen=True)
class FactorizationReport:
    joint_ratio: float  # P(both balls hit) / P(both points hit)
    a_m: float
    statistic: float  # joint_ratio / a_m^2
    stderr: float
    n_trials: int

    @property
    def z_score(self) -> float:
        return (self.statistic - 1.0) / self.stderr if self.stderr > 0 else math.inf

    def within(self, sigmas: float = 3.0) -> bool:
        return abs(self.statistic - 1.0) <= sigmas * self.stderr


def decoupling_factorization(z: Sequence[float], w: Sequence[float], r: float, m: float, trials: int, seed: int,
                             x: Sequence[float] = X_HAT, workers: int = 1, offset: int = 0) -> FactorizationReport:
    """Compare P(B(z,r), B(w,r) both hit)/P(z, w in eta) with a_m(r)^2, all on shared trials.

    The statistic T = (J_ball / J_point) (P_x / B_x)^2 has a log-delta-method
    standard error from the full covariance of the four columns.
    """
    pts = [tuple(nearest_lattice_point(v, m)) for v in (x, z, w)]
    balls = tuple((tuple(float(c) for c in p), r * m) for p in pts)
    # columns: 0 length, 1-3 points x z w, 4-6 balls x z w, 7 points z*w, 8 balls z*w
    task = LerwTask(m, tuple(pts), balls, products=((1, 2), (4, 5)))
    mom = run_trials(task, seed, trials, workers, offset)
    cols = [8, 7, 1, 4]  # J_ball, J_point, P_x, B_x
    signs = [1.0, -1.0, 2.0, -2.0]
    means = [mom.mean(c) for c in cols]
    if min(means) == 0:
        return FactorizationReport(math.nan, math.nan, math.nan, math.inf, mom.n)
    g = [sg / mu for sg, mu in zip(signs, means)]
    var = sum(g[a] * g[b] * mom.cov(cols[a], cols[b]) for a in range(4) for b in range(4)) / mom.n
    joint = means[0] / means[1]
    a = means[3] / means[2]
    t = joint / (a * a)
    return FactorizationReport(joint, a, t, t * math.sqrt(max(var, 0.0)), mom.n)


# ---------------------------------------------------------------- records


def append_record(path, est: Estimate, wall_time_s: float = 0.0, extra: dict | None = None) -> dict:
    """Append one JSON line describing ``est``; returns the record."""
    rec = {
        "descriptor": est.descriptor,
        "params": est.params,
        "mean": est.mean,
        "stderr": est.stderr,
        "n_trials": est.n_trials,
        "seed": est.seed,
        "wall_time_s": wall_time_s,
        "code_version": CODE_VERSION,
    }
    if extra:
        rec.update(extra)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "a") as fh:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.flush()
        os.fsync(fh.fileno())
    return rec


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
