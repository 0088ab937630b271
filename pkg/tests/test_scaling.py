import csv
import json
import math

import numpy as np
import pytest

from lerwlab.estimators import Estimate, PreconditionError
from lerwlab.lattice import DyadicBox
from lerwlab.scaling import (asymptotic_constant_fit, consistent, dispersion, estimate_beta, fit_power_law,
                             funceq_check, minkowski_occupation_test, ratio_report, write_fit_csv, write_json)


def test_noiseless_recovery():
    pts = [(x, (3 * x**-1.5, 0.0)) for x in (2, 4, 8, 16)]
    fit = fit_power_law(pts)
    assert fit.exponent == pytest.approx(-1.5, abs=1e-9)
    assert fit.amplitude == pytest.approx(3.0, rel=1e-9)
    pts = [(x, (3 * x**-1.5, 1e-3 * 3 * x**-1.5)) for x in (2, 4, 8, 16)]
    fit = fit_power_law(pts)
    assert fit.exponent == pytest.approx(-1.5, abs=1e-9)
    assert fit.exponent_ci[0] < -1.5 < fit.exponent_ci[1]
    assert fit.chi2 == pytest.approx(0, abs=1e-15) and fit.dof == 2


def test_fit_errors():
    with pytest.raises(PreconditionError):
        fit_power_law([(2, (1.0, 0.1))])
    with pytest.raises(PreconditionError):
        fit_power_law([(2, (1.0, 0.1)), (4, (0.0, 0.1)), (8, (0.5, 0.1))])
    with pytest.raises(PreconditionError):
        fit_power_law([(2, (1.0, 0.1)), (2, (1.0, 0.1)), (2, (0.5, 0.1))])


def test_scale_equivariance_and_determinism():
    rng = np.random.default_rng(0)
    xs = np.array([8, 16, 32, 64, 128.0])
    ys = 2.5 * xs**1.6 * np.exp(rng.normal(0, 0.01, len(xs)))
    pts = [(x, (y, 0.01 * y)) for x, y in zip(xs, ys)]
    a = fit_power_law(pts)
    b = fit_power_law([(7.3 * x, v) for x, v in pts])
    assert b.exponent == pytest.approx(a.exponent, abs=1e-9)
    assert b.amplitude == pytest.approx(a.amplitude * 7.3**-a.exponent, rel=1e-9)
    assert fit_power_law(pts).to_dict() == a.to_dict()


def test_bootstrap_ci_coverage():
    # the 95% interval from noisy synthetic data covers the true exponent about 95% of the time
    rng = np.random.default_rng(1)
    xs = np.array([8, 16, 32, 64, 128.0])
    hits = 0
    for i in range(200):
        rel = 0.02
        ys = xs**-1.4 * np.exp(rng.normal(0, rel, len(xs)))
        f = fit_power_law([(x, (y, rel * y)) for x, y in zip(xs, ys)], n_boot=2000, seed=i)
        hits += f.exponent_ci[0] <= -1.4 <= f.exponent_ci[1]
    assert 0.89 <= hits / 200 <= 0.99


def test_fit_accepts_estimates():
    pts = [(m, Estimate(m**1.6, 0.01 * m**1.6, 100, 0, "length")) for m in (8, 16, 32)]
    assert fit_power_law(pts).exponent == pytest.approx(1.6)


def test_consistent():
    assert consistent(1.0, (0.9, 1.1), 1.05, (1.0, 1.1))
    assert not consistent(1.0, (0.99, 1.01), 1.5, (1.49, 1.51))
    assert consistent(1.0, (0.9, 1.1), 1.0)


def test_ratio_report_trivial_and_synthetic():
    rep = ratio_report(lambda t: (1.7 * 0.6**t, 1e-3), [4, 5], [0, 0.5])
    assert rep.passed
    for e in rep.entries:
        assert e.ratio == pytest.approx(1.0, abs=1e-12)
        if e.r == 0 or e.s == 0:
            assert e.ratio == 1.0 and e.ci == (1.0, 1.0)
    assert len(rep.entries) == 6
    # a non-geometric sequence is flagged
    bad = ratio_report(lambda t: (math.exp(-t * t), 1e-6 * math.exp(-t * t)), [4], [0, 0.5, 1])
    assert not bad.passed
    assert json.loads(json.dumps(rep.to_dict()))["passed"] is True


def test_funceq_check_with_injected_z_and_errors():
    rep = funceq_check((0.5, 0, 0), [4, 5], [0, 0.5, 1], 1, 0, z=lambda t: (2.0 ** (-1.4 * t), 1e-4))
    assert rep.passed and all(abs(e.ratio - 1) < 1e-12 for e in rep.entries)
    with pytest.raises(PreconditionError):
        funceq_check((0.5, 0, 0), [4], [0, 1.5], 1, 0)


def test_dispersion():
    ratios = {((1, 0, 0), 3): (2.0, 0.1), ((0, 1, 0), 3): (2.0, 0.1), ((1, 0, 0), 4): (2.0, 0.1),
              ((0, 1, 0), 4): (2.0, 0.1)}
    cv, stable = dispersion(ratios)
    assert cv == {3: 0.0, 4: 0.0} and all(stable.values())
    ratios[((0, 1, 0), 4)] = (3.0, 0.1)
    cv, stable = dispersion(ratios)
    assert cv[4] > 0 and not stable[(0, 1, 0)] and stable[(1, 0, 0)]
    cv, _ = dispersion({((1, 0, 0), 3): (1.5, 0.1)})
    assert cv == {3: 0.0}


def test_minkowski_occupation_smoke():
    boxes = [DyadicBox(2, (1, 0, 0)), DyadicBox(2, (0, 1, 0))]
    rep = minkowski_occupation_test(boxes, 32, [3], 200, seed=1, beta=1.6)
    assert set(rep.cv) == {3} and set(rep.s_stable) == {(1, 0, 0), (0, 1, 0)}
    for r, se in rep.ratios.values():
        assert r > 0 and se >= 0
    assert json.loads(json.dumps(rep.to_dict(), default=str))["m"] == 32
    with pytest.raises(PreconditionError):
        minkowski_occupation_test(boxes, 32, [4], 10, seed=1, beta=1.6)


def test_asymptotic_constant_fit():
    beta, b = 1.6, 0.7
    pts = [(r, (b * r ** (beta - 3), 1e-3 * b * r ** (beta - 3))) for r in (1 / 8, 1 / 4, 1 / 2)]
    fit = asymptotic_constant_fit(pts, beta)
    assert fit.constant == pytest.approx(b, rel=1e-9)
    assert fit.fit.exponent == pytest.approx(beta - 3, abs=1e-9)
    assert fit.flat and fit.exponent_consistent
    bnd = asymptotic_constant_fit([(r, (0.3 * (1 - r) ** (beta - 1), 1e-3)) for r in (0.5, 0.75, 0.875)], beta,
                                  mode="boundary")
    assert bnd.fit.exponent == pytest.approx(beta - 1, abs=1e-9)
    with pytest.raises(PreconditionError):
        asymptotic_constant_fit(pts, beta, mode="sideways")


def test_estimate_beta_small():
    fit, ests = estimate_beta([4, 8, 16, 32], 2000, seed=3)
    assert len(ests) == 4 and 1.0 < fit.exponent < 2.0
    with pytest.raises(PreconditionError):
        estimate_beta([4, 8, 16], 10, seed=3)


def test_outputs(tmp_path):
    pts = [(x, (x**2.0, 0.1)) for x in (1, 2, 4)]
    fit = fit_power_law(pts, n_boot=10)
    write_fit_csv(tmp_path / "f.csv", pts, fit)
    rows = list(csv.DictReader(open(tmp_path / "f.csv")))
    assert [float(r["scale"]) for r in rows] == [1, 2, 4]
    assert float(rows[2]["fit"]) == pytest.approx(16, rel=1e-9)
    write_json(tmp_path / "f.json", {"fit": fit.to_dict(), "v": np.float64(1.5)})
    assert json.load(open(tmp_path / "f.json"))["v"] == 1.5
