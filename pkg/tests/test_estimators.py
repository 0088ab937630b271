import itertools
import json
import math

import numpy as np
import pytest

from lerwlab.estimators import (BoxTask, EsTask, LerwTask, Moments, PreconditionError, append_record,
                                decompose_one_point, decoupling_factorization, decoupling_ratio, estimate_ball_hit,
                                estimate_ball_hit_profile, estimate_es, estimate_one_point, estimate_two_point,
                                lattice_bounds, mean_length, minkowski_content, neighborhood_volume,
                                occupation_measure, run_trials)
from lerwlab.harmonic import green_function, hitting_field
from lerwlab.lattice import BallDomain, DyadicBox, dyadic_partition, nearest_lattice_point
from lerwlab.loop_erasure import lerw_sample
from lerwlab.rng import SeedSpec

from oracles import one_point_exact

# [DERIVED] exact P((1,0,0) on LERW in the radius-2 ball), from oracles.one_point_exact(2, (1, 0, 0))
ONE_POINT_M2 = 0.19038764345736472


def zscore(est, target):
    return (est.mean - target) / est.stderr


# ---------------------------------------------------------------- accumulation


def test_moments_exact_and_mergeable():
    rng = np.random.default_rng(0)
    obs = rng.integers(0, 50, size=(1000, 3))
    whole = Moments.of(obs)
    parts = [Moments.of(obs[i:i + 137]) for i in range(0, 1000, 137)]
    acc = Moments.empty(3)
    for p in reversed(parts):
        acc = acc.merge(p)
    assert acc == whole
    assert whole.mean(1) == pytest.approx(obs[:, 1].mean())
    assert whole.cov(0, 2) == pytest.approx(np.cov(obs[:, 0], obs[:, 2])[0, 1])
    assert whole.stderr(0) == pytest.approx(obs[:, 0].std(ddof=1) / math.sqrt(1000))
    assert Moments.from_json(json.loads(json.dumps(whole.to_json()))) == whole
    with pytest.raises(ValueError):
        whole.merge(Moments.empty(2))


def test_ratio_delta_method_against_bootstrap():
    rng = np.random.default_rng(1)
    a = rng.random(20_000) < 0.3
    b = a | (rng.random(20_000) < 0.2)
    mom = Moments.of(np.c_[a, b])
    r, se = mom.ratio(0, 1)
    boots = []
    for _ in range(400):
        i = rng.integers(0, 20_000, 20_000)
        boots.append(a[i].mean() / b[i].mean())
    assert r == pytest.approx(a.mean() / b.mean())
    assert se == pytest.approx(np.std(boots), rel=0.15)


def test_run_trials_chunking_and_workers_bit_identical():
    task = LerwTask(10, ((5, 0, 0),), balls=(((5.0, 0.0, 0.0), 2.0),))
    ref = run_trials(task, 9, 3000)
    assert run_trials(task, 9, 3000, chunk=97) == ref
    assert run_trials(task, 9, 3000, workers=3, chunk=500) == ref
    left = run_trials(task, 9, 1234)
    right = run_trials(task, 9, 3000 - 1234, offset=1234)
    assert right.merge(left) == ref
    with pytest.raises(PreconditionError):
        run_trials(task, 9, 0)
    with pytest.raises(PreconditionError):
        run_trials(task, -1, 10)


def test_task_rows_match_python_samplers():
    # the batched kernel and the one-path API sample the same curves
    m = 7.5
    obs = LerwTask(m, ((3, 1, 0),))(4, 0, 200)
    for t in range(200):
        eta = lerw_sample(BallDomain(m), SeedSpec(4, t))
        assert obs[t, 0] == len(eta)
        assert obs[t, 1] == int(((eta.points == (3, 1, 0)).all(axis=1)).any())


# ---------------------------------------------------------------- one point


def test_one_point_origin_is_one():
    est = estimate_one_point((0, 0, 0), 16, 500, seed=1)
    assert est.mean == 1.0 and est.stderr == 0.0


def test_one_point_m2_exact():
    est = estimate_one_point((0.5, 0, 0), 2, 2_000_000, seed=3)
    assert abs(zscore(est, ONE_POINT_M2)) < 3
    assert 0 <= est.mean <= 1


@pytest.mark.slow
def test_one_point_m2_exact_ten_million():
    est = estimate_one_point((0.5, 0, 0), 2, 10_000_000, seed=4)
    assert abs(zscore(est, ONE_POINT_M2)) < 5


@pytest.mark.slow
def test_one_point_oracle_recompute():
    p, total = one_point_exact(2, (1, 0, 0))
    assert total == pytest.approx(1.0, abs=1e-6)
    assert p == pytest.approx(ONE_POINT_M2, abs=1e-12)


def test_one_point_preconditions():
    with pytest.raises(PreconditionError):
        estimate_one_point((1.0, 0, 0), 16, 10, seed=0)
    with pytest.raises(PreconditionError):
        estimate_one_point((0.5, 0, 0), 16, 10, seed=0, truncation=1.5)


def test_stderr_shrinks_as_root_n():
    a = estimate_one_point((0.5, 0, 0), 8, 20_000, seed=5)
    b = estimate_one_point((0.5, 0, 0), 8, 80_000, seed=5)
    assert b.stderr / a.stderr == pytest.approx(0.5, rel=0.1)


def test_ilerw_truncation_stability():
    # reduced-size version of the K -> 2K self-consistency check (see the decisions ledger)
    a = estimate_one_point((0.5, 0, 0), 8, 100_000, seed=6, truncation=4)
    b = estimate_one_point((0.5, 0, 0), 8, 100_000, seed=7, truncation=8)
    assert abs(a.mean - b.mean) <= 2 * math.hypot(a.stderr, b.stderr)


@pytest.mark.slow
def test_ilerw_truncation_stability_m16():
    a = estimate_one_point((0.5, 0, 0), 16, 100_000, seed=8, truncation=4)
    b = estimate_one_point((0.5, 0, 0), 16, 100_000, seed=9, truncation=8)
    assert abs(a.mean - b.mean) <= 2 * math.hypot(a.stderr, b.stderr)


def test_mean_length_matches_samples():
    est = mean_length(6, 300, seed=2)
    lens = [len(lerw_sample(BallDomain(6), SeedSpec(2, t))) for t in range(300)]
    assert est.mean == pytest.approx(np.mean(lens), rel=1e-15)
    assert est.stderr == pytest.approx(np.std(lens, ddof=1) / math.sqrt(300))


# ---------------------------------------------------------------- ball hit / two point


def test_ball_hit_monotone_and_preconditions():
    radii = [1 / 16, 1 / 8, 3 / 16]
    ests = estimate_ball_hit_profile((0.5, 0, 0), radii, 64, 3000, seed=3)
    assert ests[0].mean <= ests[1].mean <= ests[2].mean
    assert estimate_ball_hit((0.5, 0, 0), 1 / 8, 64, 3000, seed=3).mean == ests[1].mean
    p = estimate_one_point((0.5, 0, 0), 64, 3000, seed=3)
    assert p.mean <= ests[0].mean
    with pytest.raises(PreconditionError):
        estimate_ball_hit((0.5, 0, 0), 0.3, 64, 10, seed=0)
    with pytest.raises(PreconditionError, match="mesh too coarse"):
        estimate_ball_hit((0.5, 0, 0), 1 / 32, 64, 10, seed=0)


def test_two_point_reductions():
    w = (0.25, 0.25, 0)
    a = estimate_two_point((0, 0, 0), w, 16, 20_000, seed=4)
    b = estimate_one_point(w, 16, 20_000, seed=4)
    assert a.mean == b.mean
    z = (0.5, 0, 0)
    j = estimate_two_point(z, w, 16, 20_000, seed=5)
    assert j.mean <= min(estimate_one_point(z, 16, 20_000, seed=5).mean, estimate_one_point(w, 16, 20_000, seed=5).mean)
    jb = estimate_two_point(z, w, 16, 20_000, seed=5, mode="ball", r=1 / 8)
    assert jb.mean >= j.mean
    with pytest.raises(PreconditionError):
        estimate_two_point(z, z, 16, 10, seed=0)
    with pytest.raises(PreconditionError):
        estimate_two_point(z, w, 16, 10, seed=0, mode="ball", r=0.3)
    with pytest.raises(PreconditionError):
        estimate_two_point(z, w, 16, 10, seed=0, mode="segment")


@pytest.mark.slow
def test_two_point_ratio_bounded_band():
    # joint / product of marginals, all three columns from the same trials; bounded across scales.
    # Point-mode joint hits at m = 64, 128 are too rare for desk-scale trial counts (see the decisions ledger).
    z, w = (0.25, 0, 0), (0, 0.25, 0)
    ratios = []
    for m, n in ((8, 200_000), (16, 400_000), (32, 1_000_000)):
        pz, pw = (tuple(nearest_lattice_point(v, m)) for v in (z, w))
        mom = run_trials(LerwTask(m, (pz, pw), products=((0, 1),)), 10, n)
        assert mom.s1[3] >= 30
        ratios.append(mom.mean(3) / (mom.mean(1) * mom.mean(2)))
    assert max(ratios) / min(ratios) < 2.0, ratios


# ---------------------------------------------------------------- escape probability


def test_es_one_is_five_sixths():
    # [DERIVED] 36 first-step pairs: disjoint unless both walks take the same first step
    for seed in (2, 3):
        est = estimate_es(1, 200_000, seed=seed)
        assert abs(zscore(est, 5 / 6)) < 3


def test_es_decreasing():
    vals = [estimate_es(m, 20_000, seed=5).mean for m in (2, 4, 8)]
    assert 1 >= vals[0] > vals[1] > vals[2] >= 0
    with pytest.raises(PreconditionError):
        estimate_es(0.5, 10, seed=0)


# ---------------------------------------------------------------- decomposition


def test_decompose_special_cases():
    d = BallDomain(8)
    assert decompose_one_point(d, (0, 0, 0), 10, seed=0).mean == 1.0
    G = green_function(d, (0, 0, 0))
    est = decompose_one_point(d, (4, 0, 0), 2000, seed=1, G=G)
    assert 0 <= est.mean <= G.value((4, 0, 0))
    with pytest.raises(PreconditionError):
        decompose_one_point(d, (8, 0, 0), 10, seed=0)
    with pytest.raises(PreconditionError):
        decompose_one_point(d, (4, 0, 0), 10, seed=0, h=hitting_field(d, (1, 0, 0)))


def test_decompose_matches_direct_m8():
    d = BallDomain(8)
    a = decompose_one_point(d, (4, 0, 0), 40_000, seed=2)
    b = estimate_one_point((0.5, 0, 0), 8, 400_000, seed=3)
    assert abs(a.mean - b.mean) <= 3 * math.hypot(a.stderr, b.stderr)


# ---------------------------------------------------------------- measures


def test_occupation_measure_conservation():
    eta = lerw_sample(BallDomain(32), SeedSpec(5, 1))
    mu = occupation_measure(eta, 2, beta=1.6)
    inside = int((np.einsum("ij,ij->i", eta.points, eta.points) < 32**2).sum())
    assert mu.total_count == inside
    cover = [DyadicBox(2, (i, j, k)) for i in range(-4, 4) for j in range(-4, 4) for k in range(-4, 4)]
    assert sum(mu.counts.get(b, 0) for b in cover) == inside
    assert sum(mu.mass(b) for b in cover) == pytest.approx(inside * 32**-1.6)
    assert mu.mass(DyadicBox(2, (3, 3, 3))) == 0  # outside the ball: empty
    ref = occupation_measure(eta, 2, "reference", f_m=12.5)
    b0 = next(iter(ref.counts))
    assert ref.mass(b0) == ref.counts[b0] / 12.5
    with pytest.raises(PreconditionError):
        occupation_measure(eta, 2, "reference")
    with pytest.raises(PreconditionError):
        occupation_measure(eta, 2, "volume")


def test_occupation_counts_match_box_task():
    m = 32
    boxes = dyadic_partition(DyadicBox(1, (0, 0, 0)), 2)
    bounds = [lattice_bounds(b, m) for b in boxes]
    task = BoxTask(m, tuple(bounds), (), (16, 0, 0))
    obs = task(6, 0, 100)
    for t in range(100):
        mu = occupation_measure(lerw_sample(BallDomain(m), SeedSpec(6, t)), 2, beta=1.6)
        assert [mu.counts.get(b, 0) for b in boxes] == obs[t, :len(boxes)].tolist()


def test_lattice_bounds_cover_box():
    m = 24
    for b in (DyadicBox(3, (2, -1, 0)), DyadicBox(2, (-2, 1, 0))):
        lo, hi = lattice_bounds(b, m)
        r = range(-m, m + 1)
        inside = np.array([p for p in itertools.product(r, r, r) if b.contains_lattice(p, m)])
        assert tuple(inside.min(axis=0)) == lo and tuple(inside.max(axis=0)) == hi
        assert len(inside) == np.prod(np.subtract(hi, lo) + 1)


def test_minkowski_empty_and_checks():
    box = DyadicBox(2, (1, 0, 0))
    far = np.array([[-0.5, -0.5, 0.0]])
    assert minkowski_content(far, box, 3, beta=1.6, m=64).J == 0.0
    with pytest.raises(PreconditionError):
        minkowski_content(far, box, 5, beta=1.6, m=64)  # 2^-5 < 4/64
    with pytest.raises(PreconditionError):
        minkowski_content(far, DyadicBox(2, (0, 0, 0)), 3, beta=1.6, m=64)


@pytest.mark.parametrize("s", [3, 4])
def test_minkowski_cylinder_oracle(s):
    # a straight segment crossing the box along x: neighbourhood volume -> pi r^2 L (plus end effects outside)
    box = DyadicBox(2, (1, 0, 0))
    m = 1024
    y = z = 0.125
    xs = np.arange(0, 1 + 1e-12, 1 / m)
    pts = np.c_[xs, np.full_like(xs, y), np.full_like(xs, z)]
    beta = 1.6
    r = 2.0**-s
    est = minkowski_content(pts, box, s, beta=beta, pitch_divisor=16, m=m)
    exact = 2 ** ((3 - beta) * s) * math.pi * r * r * box.side
    assert est.J == pytest.approx(exact, rel=0.02)


def test_neighborhood_volume_brute_force():
    rng = np.random.default_rng(3)
    pts = rng.random((40, 3)) * 0.5
    lo, hi, r, pitch = np.zeros(3), np.full(3, 0.5), 0.06, 0.01
    g = (np.arange(50) + 0.5) * pitch
    grid = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    d2 = ((grid[:, None, :] - pts[None]) ** 2).sum(-1).min(1)
    assert neighborhood_volume(pts, lo, hi, r, pitch) == pytest.approx((d2 <= r * r).sum() * pitch**3, rel=1e-12)


# ---------------------------------------------------------------- decoupling


def test_decoupling_singleton_and_monotone():
    est = decoupling_ratio("point", 32, 20_000, seed=7)
    assert est.mean == 1.0 and est.stderr == 0.0
    a = decoupling_ratio(1 / 16, 32, 20_000, seed=7)
    assert a.mean >= 1.0
    with pytest.raises(PreconditionError):
        decoupling_ratio(0.2, 32, 10, seed=0)


def test_factorization_report_shape():
    rep = decoupling_factorization((0.5, 0.1, 0), (0.5, -0.1, 0), 1 / 32, 32, 5000, seed=8)
    assert rep.n_trials == 5000
    if math.isfinite(rep.statistic):
        assert rep.joint_ratio >= 1.0 and rep.a_m >= 1.0 and rep.stderr > 0


# ---------------------------------------------------------------- records


def test_append_record(tmp_path):
    est = estimate_es(2, 100, seed=1)
    p = tmp_path / "sub" / "r.jsonl"
    append_record(p, est, 0.5, {"cell": 3})
    append_record(p, est, 0.7)
    lines = p.read_text().splitlines()
    assert len(lines) == 2
    rec = json.loads(lines[0])
    assert rec["mean"] == est.mean and rec["cell"] == 3 and rec["descriptor"] == "es"
    assert list(rec) == sorted(rec)
