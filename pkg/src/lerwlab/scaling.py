"""Exponent fits, ratio tests and proportionality checks built on Estimates."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .estimators import BoxTask, Estimate, PreconditionError, _minkowski_checks, estimate_one_point, lattice_bounds, \
    mean_length, run_trials
from .lattice import X_HAT, DyadicBox, nearest_lattice_point

Z95 = 1.959963984540054
N_BOOT = 10_000
ANALYSIS_SEED = 20240531
CV_THRESHOLD = 0.15
SCALE_STRIDE = 1 << 40  # trial-index offset between scales, keeps scales independent


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    amplitude: float
    exponent_ci: tuple[float, float]
    amplitude_ci: tuple[float, float]
    exponent_stderr: float
    chi2: float
    dof: int
    scales: tuple = ()
    residuals: tuple = ()
    n_boot: int = N_BOOT

    def predict(self, x) -> np.ndarray:
        return self.amplitude * np.asarray(x, dtype=float) ** self.exponent

    @property
    def exponent_halfwidth(self) -> float:
        return (self.exponent_ci[1] - self.exponent_ci[0]) / 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exponent_ci"] = list(self.exponent_ci)
        d["amplitude_ci"] = list(self.amplitude_ci)
        d["scales"] = list(self.scales)
        d["residuals"] = list(self.residuals)
        return d


def _as_point(p) -> tuple[float, float, float]:
    scale, est = p
    if isinstance(est, Estimate):
        return float(scale), est.mean, est.stderr
    mean, se = est
    return float(scale), float(mean), float(se)


def _wls(lx: np.ndarray, ly: np.ndarray, w: np.ndarray):
    # vectorized over rows of ly: returns (slope, intercept)
    sw = w.sum()
    mx = (w * lx).sum() / sw
    my = (ly * w).sum(axis=-1) / sw
    sxx = (w * (lx - mx) ** 2).sum()
    sxy = ((ly - my[..., None]) * (w * (lx - mx))).sum(axis=-1)
    b = sxy / sxx
    return b, my - b * mx


def fit_power_law(points: Iterable, n_boot: int = N_BOOT, seed: int = ANALYSIS_SEED) -> PowerLawFit:
    """Fit mean = A scale^b by weighted least squares in log-log.

    ``points`` are ``(scale, Estimate)`` or ``(scale, (mean, stderr))`` pairs.
    Weights are 1 / (stderr / mean)^2; the 95% intervals come from a parametric
    bootstrap that redraws each log-mean from a normal with the delta-method
    standard deviation stderr / mean.
    """
    pts = [_as_point(p) for p in points]
    if len(pts) < 3:
        raise PreconditionError("a power-law fit needs at least 3 scales")
    x, y, se = (np.array(v, dtype=float) for v in zip(*pts))
    if (x <= 0).any():
        raise PreconditionError("scales must be positive")
    if (y <= 0).any():
        raise PreconditionError("power-law fit needs positive means")
    if len(np.unique(x)) < 2:
        raise PreconditionError("a power-law fit needs distinct scales")
    rel = se / y
    if (rel > 0).any():
        w = 1.0 / np.where(rel > 0, rel, rel[rel > 0].min()) ** 2
    else:
        w = np.ones_like(rel)
    lx, ly = np.log(x), np.log(y)
    b, a = _wls(lx, ly, w)
    res = ly - (a + b * lx)
    chi2 = float((w * res**2).sum()) if (rel > 0).any() else 0.0
    sxx = (w * (lx - (w * lx).sum() / w.sum()) ** 2).sum()
    b_se = float(math.sqrt(1.0 / sxx)) if (rel > 0).any() else 0.0
    if (rel > 0).any() and n_boot > 0:
        rng = np.random.default_rng(seed)
        sims = ly + rng.standard_normal((n_boot, len(ly))) * rel
        bs, as_ = _wls(lx, sims, w)
        lo_b, hi_b = np.percentile(bs, [2.5, 97.5])
        lo_a, hi_a = np.exp(np.percentile(as_, [2.5, 97.5]))
    else:
        lo_b = hi_b = b
        lo_a = hi_a = math.exp(a)
    return PowerLawFit(float(b), float(math.exp(a)), (float(lo_b), float(hi_b)), (float(lo_a), float(hi_a)), b_se,
                       chi2, len(pts) - 2, tuple(map(float, x)), tuple(map(float, res)), n_boot)


def consistent(value_a: float, ci_a: tuple[float, float], value_b: float, ci_b: tuple[float, float] = (0.0, 0.0),
               z: float = Z95) -> bool:
    """Whether two independent estimates agree within their joint interval.

    Half-widths are converted to standard errors and combined in quadrature.
    """
    sa = (ci_a[1] - ci_a[0]) / (2 * Z95)
    sb = (ci_b[1] - ci_b[0]) / (2 * Z95)
    return abs(value_a - value_b) <= z * math.hypot(sa, sb)


def estimate_beta(m_list: Sequence[float], trials: int, seed: int, workers: int = 1,
                  n_boot: int = N_BOOT) -> tuple[PowerLawFit, list[Estimate]]:
    """Growth exponent from the mean number of steps of eta_m, one independent trial block per scale."""
    if len(m_list) < 4:
        raise PreconditionError("beta estimation needs at least 4 scales")
    ests = [mean_length(m, trials, seed, workers, offset=i * SCALE_STRIDE) for i, m in enumerate(m_list)]
    return fit_power_law(list(zip(m_list, ests)), n_boot), ests


# ---------------------------------------------------------------- functional equation


@dataclass(frozen=True)
class RatioEntry:
    n: float
    r: float
    s: float
    ratio: float
    ci: tuple[float, float]

    @property
    def covers_one(self) -> bool:
        return self.ci[0] <= 1.0 <= self.ci[1]


@dataclass(frozen=True)
class RatioTestReport:
    entries: tuple
    terms: dict = field(default_factory=dict)  # t -> (mean, stderr)

    @property
    def passed(self) -> bool:
        return all(e.covers_one for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "entries": [dict(asdict(e), ci=list(e.ci), covers_one=e.covers_one) for e in self.entries],
            "terms": {repr(k): list(v) for k, v in self.terms.items()},
        }


def ratio_report(z: Callable[[float], tuple[float, float]], n_list: Sequence[float], r_grid: Sequence[float],
                 zcrit: float = Z95) -> RatioTestReport:
    """z(r+s+n) z(n) / (z(r+n) z(s+n)) for all n and r <= s in ``r_grid``, with log-delta-method intervals.

    ``z(t)`` returns ``(mean, stderr)``; terms at distinct t are treated as
    independent.  Repeated terms are combined before the variance is formed,
    so r = 0 or s = 0 yields exactly 1 with a zero-width interval.
    """
    cache: dict = {}

    def term(t):
        t = float(t)
        if t not in cache:
            mean, se = z(t)
            cache[t] = (float(mean), float(se))
        return cache[t]

    entries = []
    for n in n_list:
        for i, r in enumerate(r_grid):
            for s in r_grid[i:]:
                coef: dict = {}
                for t, c in ((r + s + n, 1), (n, 1), (r + n, -1), (s + n, -1)):
                    coef[float(t)] = coef.get(float(t), 0) + c
                coef = {t: c for t, c in coef.items() if c != 0}
                if not coef:
                    entries.append(RatioEntry(n, r, s, 1.0, (1.0, 1.0)))
                    continue
                logr = 0.0
                var = 0.0
                for t, c in coef.items():
                    mean, se = term(t)
                    if mean <= 0:
                        raise PreconditionError(f"z({t}) has nonpositive estimate")
                    logr += c * math.log(mean)
                    var += (c * se / mean) ** 2
                sd = math.sqrt(var)
                ratio = math.exp(logr)
                entries.append(RatioEntry(n, r, s, ratio, (ratio * math.exp(-zcrit * sd), ratio * math.exp(zcrit * sd))))
    return RatioTestReport(tuple(entries), dict(sorted(cache.items())))


def funceq_check(x: Sequence[float], n_list: Sequence[float], r_grid: Sequence[float], trials: int, seed: int,
                 workers: int = 1, z: Callable | None = None) -> RatioTestReport:
    """Ratio test of z(t) = P(x_{2^t} on eta_{2^t}); each t gets its own independent trial block."""
    if any(not 0 <= r <= 1 for r in r_grid):
        raise PreconditionError("r grid must lie in [0, 1]")
    if z is None:
        ts = sorted({float(n + r + s) for n in n_list for r in r_grid for s in r_grid}
                    | {float(n + r) for n in n_list for r in r_grid})
        block = {t: i for i, t in enumerate(ts)}

        def z(t):
            e = estimate_one_point(x, 2.0**t, trials, seed, workers, offset=block[t] * SCALE_STRIDE)
            return e.mean, e.stderr

    return ratio_report(z, n_list, list(r_grid))


# ---------------------------------------------------------------- Minkowski vs occupation


@dataclass(frozen=True)
class ProportionalityReport:
    m: float
    beta: float
    n_trials: int
    ratios: dict  # (box k, s) -> (E[J]/E[mu], stderr)
    cv: dict  # s -> cross-box coefficient of variation
    s_stable: dict  # box k -> whether ratios across s agree within CI
    c0: dict  # s -> (estimate, stderr)
    one_point: tuple = (math.nan, math.nan)
    cv_threshold: float = CV_THRESHOLD

    @property
    def max_cv(self) -> float:
        return max(self.cv.values())

    @property
    def passed(self) -> bool:
        return self.max_cv <= self.cv_threshold and all(self.s_stable.values())

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "beta": self.beta,
            "n_trials": self.n_trials,
            "ratios": [{"box": list(k), "s": s, "ratio": v[0], "stderr": v[1]} for (k, s), v in self.ratios.items()],
            "cv": {str(s): v for s, v in self.cv.items()},
            "s_stable": [{"box": list(k), "stable": v} for k, v in self.s_stable.items()],
            "c0": {str(s): list(v) for s, v in self.c0.items()},
            "one_point": list(self.one_point),
            "passed": self.passed,
        }


def dispersion(ratios: dict, zcrit: float = Z95) -> tuple[dict, dict]:
    """Cross-box CV per s and per-box s-stability from {(box, s): (ratio, stderr)}.

    Stability: every pair of resolutions of a box agrees within the joint interval.
    """
    boxes = sorted({k for k, _ in ratios})
    ss = sorted({s for _, s in ratios})
    cv = {}
    for s in ss:
        vals = np.array([ratios[(k, s)][0] for k in boxes if (k, s) in ratios])
        cv[s] = float(vals.std(ddof=1) / vals.mean()) if len(vals) > 1 else 0.0
    stable = {}
    for k in boxes:
        ok = True
        for i, s1 in enumerate(ss):
            for s2 in ss[i + 1:]:
                (a, sa), (b, sb) = ratios[(k, s1)], ratios[(k, s2)]
                ok &= abs(a - b) <= zcrit * math.hypot(sa, sb)
        stable[k] = bool(ok)
    return cv, stable


def minkowski_occupation_test(boxes: Sequence[DyadicBox], m: int, s_list: Sequence[int], trials: int, seed: int,
                              beta: float | None = None, workers: int = 1, x: Sequence[float] = X_HAT,
                              pitch_divisor: int = 8, cv_threshold: float = CV_THRESHOLD) -> ProportionalityReport:
    """Per trial: mu_bar(V) = m^-beta #(eta in V) and J_s(V) for every box V and resolution s.

    Reports E[J]/E[mu_bar] per (V, s) (ratio of means over shared trials, so a
    trial where eta stays away from V adds nothing to either sum), its
    cross-box CV, and c0(s) = E[J_s(x + box of side 1/m)] / (m^-beta P(x in eta)).
    """
    from .calibration import default_beta

    beta = default_beta() if beta is None else beta
    for V in boxes:
        for s in s_list:
            _minkowski_checks(V, s, m)
    lat = tuple(lattice_bounds(V, m) for V in boxes)
    vols = []
    for V in boxes:
        for s in s_list:
            r = 2.0**-s
            vols.append((tuple(V.lower), tuple(V.upper), r, r / pitch_divisor))
    p = nearest_lattice_point(x, m)
    cube_lo = tuple((c - 0.5) / m for c in p)
    cube_hi = tuple((c + 0.5) / m for c in p)
    for s in s_list:
        vols.append((cube_lo, cube_hi, 2.0**-s, 1.0 / (m * pitch_divisor)))
    task = BoxTask(float(m), lat, tuple(vols), tuple(p))
    mom = run_trials(task, seed, trials, workers)
    nb_ = len(boxes)
    mu_scale = float(m) ** -beta
    ratios = {}
    col = nb_
    for i, V in enumerate(boxes):
        for s in s_list:
            j_scale = 2.0 ** ((3 - beta) * s) * vols[col - nb_][3] ** 3
            r, se = mom.ratio(col, i)
            ratios[(V.k, s)] = (r * j_scale / mu_scale, se * j_scale / mu_scale)
            col += 1
    tcol = nb_ + len(vols)
    p_hat = mom.mean(tcol)
    c0 = {}
    for s in s_list:
        j_scale = 2.0 ** ((3 - beta) * s) * vols[col - nb_][3] ** 3
        r, se = mom.ratio(col, tcol)
        c0[s] = (r * j_scale / mu_scale, se * j_scale / mu_scale)
        col += 1
    cv, stable = dispersion(ratios)
    return ProportionalityReport(float(m), beta, mom.n, ratios, cv, stable, c0, (p_hat, mom.stderr(tcol)), cv_threshold)


# ---------------------------------------------------------------- asymptotic constants


@dataclass(frozen=True)
class AsymptoticFit:
    mode: str
    fit: PowerLawFit  # free-exponent fit of g against the distance variable
    expected_exponent: float
    constant: float  # weighted mean of g d^-expected
    constant_stderr: float
    flatness_slope_ci: tuple[float, float]

    @property
    def flat(self) -> bool:
        return self.flatness_slope_ci[0] <= 0.0 <= self.flatness_slope_ci[1]

    @property
    def exponent_consistent(self) -> bool:
        return self.fit.exponent_ci[0] <= self.expected_exponent <= self.fit.exponent_ci[1]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "fit": self.fit.to_dict(), "expected_exponent": self.expected_exponent,
                "constant": self.constant, "constant_stderr": self.constant_stderr,
                "flatness_slope_ci": list(self.flatness_slope_ci), "flat": self.flat,
                "exponent_consistent": self.exponent_consistent}


def asymptotic_constant_fit(points: Sequence, beta: float, mode: str = "origin",
                            n_boot: int = N_BOOT) -> AsymptoticFit:
    """Fit g(x) along a ray as a power of |x| (``mode="origin"``) or of 1 - |x| (``mode="boundary"``).

    ``points`` are ``(|x|, Estimate or (mean, stderr))``.  In origin mode the
    reference exponent is beta - 3 and ``constant`` estimates b1 = lim g |x|^(3 - beta).
    In boundary mode the exponent is fitted freely and compared with beta - 1;
    no sign convention for it is assumed.
    """
    pts = [_as_point(p) for p in points]
    if len(pts) < 3:
        raise PreconditionError("need at least 3 radii")
    if mode == "origin":
        d = [r for r, _, _ in pts]
        expected = beta - 3.0
    elif mode == "boundary":
        d = [1.0 - r for r, _, _ in pts]
        expected = beta - 1.0
    else:
        raise PreconditionError(f"unknown mode {mode!r}")
    fit = fit_power_law([(di, (mu, se)) for di, (_, mu, se) in zip(d, pts)], n_boot)
    # compensated values g d^-expected: constant estimate and a flatness fit
    comp = [(di, (mu * di**-expected, se * di**-expected)) for di, (_, mu, se) in zip(d, pts)]
    vals = np.array([c[1][0] for c in comp])
    ses = np.array([c[1][1] for c in comp])
    if (ses > 0).all():
        w = 1 / ses**2
        const = float((w * vals).sum() / w.sum())
        const_se = float(math.sqrt(1 / w.sum()))
    else:
        const, const_se = float(vals.mean()), 0.0
    flat = fit_power_law(comp, n_boot)
    return AsymptoticFit(mode, fit, expected, const, const_se, flat.exponent_ci)


# ---------------------------------------------------------------- output


def write_fit_csv(path, points: Sequence, fit: PowerLawFit | None = None) -> None:
    """Plot-ready rows: scale, mean, stderr, fit."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scale", "mean", "stderr", "fit"])
        for p in points:
            x, mu, se = _as_point(p)
            w.writerow([repr(x), repr(mu), repr(se), repr(float(fit.predict(x))) if fit else ""])


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
