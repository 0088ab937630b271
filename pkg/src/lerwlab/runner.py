"""Grid execution with per-cell checkpointing, result records and reports."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import estimators as E
from .calibration import BETA_BOUNDS, in_bounds, load_calibration
from .lattice import X_HAT, BallDomain, nearest_lattice_point
from .manifest import ExperimentManifest, ManifestError
from .scaling import consistent, fit_power_law, ratio_report, write_fit_csv, write_json

log = logging.getLogger("lerwlab")

RECORDS = "records.jsonl"
SUMMARY = "summary.csv"
VOLATILE = ("wall_time_s", "started_at", "finished_at")


class MissingDataError(RuntimeError):
    pass


# ---------------------------------------------------------------- estimator registry


def _x(p, key="x"):
    return tuple(p.get(key, X_HAT))


def _check_length(p, trials):
    if not p["m"] > 0:
        raise E.PreconditionError("m must be positive")


def _check_es(p, trials):
    if p["m"] < 1:
        raise E.PreconditionError("m must be at least 1")


def _check_decompose(p, trials):
    m = p["m"]
    x = nearest_lattice_point(_x(p), m)
    if not BallDomain(m).contains(x):
        raise E.PreconditionError(f"x rounds to {tuple(x)}, outside the domain of radius {m}")


def _check_decoupling(p, trials):
    if p["shape"] != "point":
        d = float(sum(v * v for v in _x(p)) ** 0.5)
        if not 0 < 4 * p["shape"] < min(d, 1 - d):
            raise E.PreconditionError("ball does not fit the small-box constraint around x")


def _check_two_point(p, trials):
    z, w = p["z"], p["w"]
    sep = math.dist(z, w)
    if sep == 0:
        raise E.PreconditionError("z and w must differ")
    E._check_in_ball(z, "z")
    E._check_in_ball(w, "w")
    if p.get("mode", "point") == "ball":
        r = p.get("r")
        if r is None or not r < sep / 2:
            raise E.PreconditionError("ball mode needs r < |z - w| / 2")
    elif p.get("mode", "point") != "point":
        raise E.PreconditionError(f"unknown mode {p['mode']!r}")


def _check_factorization(p, trials):
    sep = math.dist(p["z"], p["w"])
    if not p["r"] < sep / 2:
        raise E.PreconditionError("balls must be separated: r < |z - w| / 2")


@dataclass(frozen=True)
class EstimatorSpec:
    check: Callable
    run: Callable  # (params, trials, seed, offset, workers) -> Estimate


def _run_factorization(p, n, seed, off, wk):
    rep = E.decoupling_factorization(p["z"], p["w"], p["r"], p["m"], n, seed, _x(p), wk, off)
    return E.Estimate(rep.statistic, rep.stderr, rep.n_trials, seed, "factorization",
                      {"joint_ratio": rep.joint_ratio, "a_m": rep.a_m})


REGISTRY = {
    "length": EstimatorSpec(
        _check_length,
        lambda p, n, seed, off, wk: E.mean_length(p["m"], n, seed, wk, off)),
    "one_point": EstimatorSpec(
        lambda p, n: E._check_in_ball(p["x"]),
        lambda p, n, seed, off, wk: E.estimate_one_point(p["x"], p["m"], n, seed, wk, off, p.get("truncation"))),
    "ball_hit": EstimatorSpec(
        lambda p, n: E._ball_checks(p["x"], p["r"], p["m"]),
        lambda p, n, seed, off, wk: E.estimate_ball_hit(p["x"], p["r"], p["m"], n, seed, wk, off)),
    "two_point": EstimatorSpec(
        _check_two_point,
        lambda p, n, seed, off, wk: E.estimate_two_point(p["z"], p["w"], p["m"], n, seed, p.get("mode", "point"),
                                                         p.get("r"), None, wk, off)),
    "es": EstimatorSpec(
        _check_es,
        lambda p, n, seed, off, wk: E.estimate_es(p["m"], n, seed, wk, off)),
    "decompose": EstimatorSpec(
        _check_decompose,
        lambda p, n, seed, off, wk: E.decompose_one_point(BallDomain(p["m"]), nearest_lattice_point(_x(p), p["m"]),
                                                          n, seed, workers=wk, offset=off)),
    "decoupling": EstimatorSpec(
        _check_decoupling,
        lambda p, n, seed, off, wk: E.decoupling_ratio(p["shape"], p["m"], n, seed, _x(p), wk, off)),
    "factorization": EstimatorSpec(_check_factorization, _run_factorization),
}


def check_cells(man: ExperimentManifest) -> None:
    """Validate every cell before any work starts; raises PreconditionError naming the cell."""
    spec = REGISTRY[man.estimator]
    for cell in man.cells():
        try:
            spec.check(cell.params, man.trials)
        except (E.PreconditionError, ValueError) as e:
            raise E.PreconditionError(f"cell {cell.index} {cell.key}: {e}") from None


# ---------------------------------------------------------------- records


def load_records(out_dir) -> list[dict]:
    p = Path(out_dir) / RECORDS
    if not p.exists():
        return []
    recs = []
    with open(p) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                recs.append(json.loads(line))
            except json.JSONDecodeError:
                # a torn final line from an interrupted run; the cell will be recomputed
                log.warning("skipping unreadable record line in %s", p)
    return recs


def records_for(man: ExperimentManifest, out_dir) -> dict:
    """cell key -> record, for records written by this manifest."""
    return {r["cell_key"]: r for r in load_records(out_dir) if r.get("manifest_hash") == man.hash}


def repair_tail(out_dir) -> bool:
    """Drop a torn final line (no trailing newline) left by an interrupted write; True if something was cut."""
    p = Path(out_dir) / RECORDS
    if not p.exists():
        return False
    with open(p, "rb+") as fh:
        data = fh.read()
        if not data or data.endswith(b"\n"):
            return False
        fh.truncate(data.rfind(b"\n") + 1)
    log.warning("removed a torn trailing record from %s", p)
    return True


def stable_view(rec: dict) -> dict:
    return {k: v for k, v in rec.items() if k not in VOLATILE}


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="milliseconds")


def run_manifest(man: ExperimentManifest, out_dir, workers: int = 1) -> list[dict]:
    """Execute all cells without a record yet; returns the new records."""
    check_cells(man)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    repair_tail(out)
    done = records_for(man, out)
    spec = REGISTRY[man.estimator]
    new = []
    todo = [c for c in man.cells() if c.key not in done]
    log.info("%s: %d cells, %d already done", man.name, len(man.cells()), len(man.cells()) - len(todo))
    with E.worker_pool(workers):
        for cell in todo:
            started = _now()
            t0 = time.perf_counter()
            est = spec.run(cell.params, man.trials, man.seed, cell.offset, workers)
            wall = time.perf_counter() - t0
            rec = E.append_record(out / RECORDS, est, wall, {
                "manifest_hash": man.hash,
                "experiment": man.name,
                "estimator": man.estimator,
                "cell_index": cell.index,
                "cell_key": cell.key,
                "cell": cell.params,
                "trial_offset": cell.offset,
                "started_at": started,
                "finished_at": _now(),
            })
            log.info("cell %d %s: %.6g +- %.2g (%.1fs)", cell.index, cell.key, est.mean, est.stderr, wall)
            new.append(rec)
    write_summary(man, out)
    return new


def write_summary(man: ExperimentManifest, out_dir) -> Path:
    recs = sorted(records_for(man, out_dir).values(), key=lambda r: r["cell_index"])
    keys = [k for k, _ in man.grid]
    path = Path(out_dir) / SUMMARY
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "estimator", "cell_index", *keys, "mean", "stderr", "n_trials", "seed"])
        for r in recs:
            vals = [" ".join(map(repr, v)) if isinstance(v, list) else v for v in (r["cell"].get(k) for k in keys)]
            w.writerow([r["experiment"], r["estimator"], r["cell_index"], *vals, repr(r["mean"]), repr(r["stderr"]),
                        r["n_trials"], r["seed"]])
    return path


# ---------------------------------------------------------------- reports


def require_cells(man: ExperimentManifest, out_dir) -> dict:
    recs = records_for(man, out_dir)
    missing = [c for c in man.cells() if c.key not in recs]
    if missing:
        raise MissingDataError("missing cells: " + "; ".join(f"{c.index} {c.key}" for c in missing))
    return recs


def _groups(man: ExperimentManifest, recs: dict, scale: str) -> dict:
    groups: dict = {}
    for c in man.cells():
        rest = json.dumps({k: v for k, v in c.params.items() if k != scale}, sort_keys=True)
        r = recs[c.key]
        groups.setdefault(rest, []).append((c.params[scale], (r["mean"], r["stderr"])))
    return groups


def report(man: ExperimentManifest, out_dir, analysis: dict | None = None, calibration=None) -> dict:
    """Fit / ratio analysis over the manifest's cells; writes report JSON and plot CSVs into ``out_dir``."""
    spec = dict(man.report if analysis is None else analysis)
    kind = spec.get("kind", "power_law")
    recs = require_cells(man, out_dir)
    out = Path(out_dir)
    result: dict = {"experiment": man.name, "manifest_hash": man.hash, "kind": kind}
    if kind == "power_law":
        scale = spec.get("scale", "m")
        fits = []
        for i, (rest, pts) in enumerate(sorted(_groups(man, recs, scale).items())):
            pts.sort()
            fit = fit_power_law(pts)
            entry = {"fixed": json.loads(rest), "scale": scale, "fit": fit.to_dict()}
            if "beta_offset" in spec:
                cal = load_calibration(calibration)
                target = cal["beta"] + float(spec["beta_offset"])
                ci = tuple(c + float(spec["beta_offset"]) for c in cal["ci"])
                entry.update(expected_exponent=target, expected_ci=list(ci),
                             consistent=consistent(fit.exponent, fit.exponent_ci, target, ci))
            fits.append(entry)
            write_fit_csv(out / f"fit_{man.name}_{i}.csv", pts, fit)
        result["fits"] = fits
    elif kind == "funceq":
        for k in ("n_list", "r_grid"):
            if k not in spec:
                raise ManifestError("funceq report needs n_list and r_grid", field=k)
        n_list = [float(v) for v in spec["n_list"].split(",")]
        r_grid = [float(v) for v in spec["r_grid"].split(",")]
        by_t = {}
        for r in recs.values():
            by_t[round(math.log2(r["cell"]["m"]), 9)] = (r["mean"], r["stderr"])

        def z(t):
            key = round(t, 9)
            if key not in by_t:
                raise MissingDataError(f"no one_point record at m = 2^{t}")
            return by_t[key]

        result["ratio_test"] = ratio_report(z, n_list, r_grid).to_dict()
    else:
        raise ManifestError(f"unknown report kind {kind!r}", field="kind")
    write_json(out / f"report_{man.name}.json", result)
    return result


@dataclass(frozen=True)
class CalibrationResult:
    beta: float
    ci: tuple
    accepted: bool
    warning: str | None
    fit: dict


def calibrate(man: ExperimentManifest, out_dir, workers: int = 1) -> CalibrationResult:
    """Run (or resume) a length manifest and fit beta from the mean lengths."""
    if man.estimator != "length":
        raise ManifestError("calibrate-beta needs a manifest with estimator = length", field="estimator")
    run_manifest(man, out_dir, workers)
    recs = require_cells(man, out_dir)
    pts = sorted((c.params["m"], (recs[c.key]["mean"], recs[c.key]["stderr"])) for c in man.cells())
    if len(pts) < 4:
        raise ManifestError("calibrate-beta needs at least 4 scales", field="m")
    return calibration_from_points(pts)


def calibration_from_points(pts) -> CalibrationResult:
    fit = fit_power_law(pts)
    lo, hi = BETA_BOUNDS
    ok = in_bounds(fit.exponent)
    warning = None
    if ok and not (lo < fit.exponent_ci[0] and fit.exponent_ci[1] <= hi):
        warning = f"beta CI [{fit.exponent_ci[0]:.4f}, {fit.exponent_ci[1]:.4f}] extends beyond ({lo}, {hi:.4f}]"
    return CalibrationResult(fit.exponent, fit.exponent_ci, ok, warning, fit.to_dict())
