import json
import math

import numpy as np
import pytest
from scipy import stats

from stochbl import Grid1D, moc_saturation, welge_hull
from stochbl.exceptions import ParameterError, StochBLError
from stochbl.fields import Constant, ConstantVelocity, FieldSample, TruncatedNormal, truncated_normal_mean
from stochbl.uq import (
    EvalGrids,
    FVMModel,
    MOCModel,
    QOIDistribution,
    SurrogateForward,
    breakthrough_time,
    compare,
    compare_qoi,
    draw_fields,
    envelope,
    front_radius,
    half_jump_threshold,
    histogram_pair,
    jsd,
    kl_divergence,
    run_ensemble,
    wasserstein1,
)

NARROW = ConstantVelocity(TruncatedNormal(1.0, 0.3, 0.5, 2.0))
SIGMA = (1.0 + math.sqrt(2.0)) / 2.0


def small_grids(**kw):
    base = dict(x=np.linspace(0, 1, 201), series_times=np.linspace(0, 1, 201))
    base.update(kw)
    return EvalGrids(**base)


# -- ensembles ---------------------------------------------------------------


def test_single_constant_realization_is_deterministic_profile(trivial):
    g = small_grids()
    ens = run_ensemble(MOCModel(trivial), NARROW, 1, g, seed=5)
    v = float(ens.thetas[0][0])
    for k, t in enumerate(g.profile_times):
        np.testing.assert_array_equal(ens.profiles[0, k], moc_saturation(trivial, v, g.x, t))
    assert ens.n == 1 and ens.model == "moc"


def test_ensembles_are_seed_deterministic(trivial):
    g = small_grids()
    a = run_ensemble(MOCModel(trivial), NARROW, 20, g, seed=11)
    b = run_ensemble(MOCModel(trivial), NARROW, 20, g, seed=11)
    np.testing.assert_array_equal(a.profiles, b.profiles)
    np.testing.assert_array_equal(a.series, b.series)
    c = run_ensemble(MOCModel(trivial), NARROW, 20, g, seed=12)
    assert not np.array_equal(a.profiles, c.profiles)


def test_mean_front_radius_follows_mean_velocity(trivial):
    # a wider window keeps the fastest fronts inside the domain
    g = EvalGrids(x=np.linspace(0, 1.5, 3001), profile_times=(0.5,), series_locations=(0.5,),
                  series_times=np.linspace(0, 1, 11))
    ens = run_ensemble(MOCModel(trivial), NARROW, 1000, g, seed=0)
    r = np.array([front_radius(ens.x, ens.profiles[i, 0], trivial) for i in range(ens.n)])
    assert np.isfinite(r).all()
    expect = SIGMA * truncated_normal_mean(NARROW.dist) * 0.5
    assert abs(r.mean() - expect) <= 0.02 * expect


def test_fvm_ensemble_matches_moc(trivial):
    g = small_grids(profile_times=(0.25, 0.5))
    samples = draw_fields(NARROW, 8, seed=2)
    ref = run_ensemble(MOCModel(trivial), NARROW, 8, g, 2, samples=samples)
    fvm = run_ensemble(FVMModel(trivial, Grid1D(256)), NARROW, 8, g, 2, samples=samples)
    assert fvm.profiles.shape == (8, 2, 256)
    rep = compare(ref, fvm, trivial)
    assert rep.relative("front_radius") < 0.2
    assert rep.relative("breakthrough_time") < 0.2


def test_run_ensemble_validation(trivial):
    g = small_grids()
    with pytest.raises(ParameterError):
        run_ensemble(MOCModel(trivial), NARROW, 0, g, seed=0)
    bad = [FieldSample(Constant(1.0), np.ones(256), np.array([1.0])),
           FieldSample(Constant(-1.0), -np.ones(256), np.array([-1.0]))]
    with pytest.raises(StochBLError, match="realization 1"):
        run_ensemble(MOCModel(trivial), NARROW, 2, g, seed=0, samples=bad)
    with pytest.raises(ParameterError):
        SurrogateForward(None, trivial).run(bad[:1], g)


# -- quantities of interest ------------------------------------------------


def test_front_radius_examples(trivial):
    x = np.linspace(0, 1, 2048)
    assert math.isnan(front_radius(x, np.zeros_like(x), trivial))
    r = front_radius(x, moc_saturation(trivial, 1.0, x, 0.5), trivial)
    assert abs(r - 0.60355) <= 2 * (x[1] - x[0])
    step = np.where(x <= 0.3, 0.8, 0.0)
    assert abs(front_radius(x, step, trivial) - 0.3) <= x[1] - x[0]
    # a front that has reached the outlet is censored
    assert math.isnan(front_radius(x, np.full_like(x, 0.9), trivial))


def test_breakthrough_examples(trivial):
    t = np.linspace(0, 1, 1001)
    assert breakthrough_time(t, moc_saturation(trivial, 1.0, np.zeros_like(t), t), trivial) == 0.0
    bt = breakthrough_time(t, moc_saturation(trivial, 1.0, np.full_like(t, 0.5), t), trivial)
    assert abs(bt - 0.41421) <= 2 * (t[1] - t[0])
    assert math.isnan(breakthrough_time(t, np.zeros_like(t), trivial))


def test_qoi_inverse_consistency(trivial):
    x = np.linspace(0, 1, 4001)
    t = np.linspace(0, 1, 4001)
    for tt in (0.2, 0.35, 0.5):
        r = front_radius(x, moc_saturation(trivial, 1.3, x, tt), trivial)
        bt = breakthrough_time(t, moc_saturation(trivial, 1.3, np.full_like(t, r), t), trivial)
        assert abs(bt - tt) <= 2e-3


def test_half_jump_threshold(trivial, residual):
    assert half_jump_threshold(trivial) == pytest.approx(0.5 / math.sqrt(2))
    assert half_jump_threshold(residual) == pytest.approx(0.5 * (welge_hull(residual).S_BL - 0.15))


def test_envelope_examples(trivial):
    g = small_grids()
    ens = run_ensemble(MOCModel(trivial), NARROW, 2, g, seed=0)
    ens.profiles[1] = ens.profiles[0]
    env = envelope(ens)
    for key in ("mean", "P15", "P85"):
        np.testing.assert_allclose(env[key], ens.profiles[0])
    ens.profiles[0] = 0.0
    ens.profiles[1] = 1.0
    env = envelope(ens)
    assert np.allclose(env["mean"], 0.5) and np.allclose(env["P15"], 0.15) and np.allclose(env["P85"], 0.85)
    one = run_ensemble(MOCModel(trivial), NARROW, 1, g, seed=0)
    with pytest.raises(ParameterError):
        envelope(one)


def test_envelope_matches_sorting_oracle(trivial):
    g = small_grids(profile_times=(0.5,))
    ens = run_ensemble(MOCModel(trivial), NARROW, 1000, g, seed=3)
    env = envelope(ens)
    srt = np.sort(ens.profiles, axis=0)
    for q in (15, 85):
        pos = q / 100 * (ens.n - 1)
        lo = int(np.floor(pos))
        w = pos - lo
        oracle = (1 - w) * srt[lo] + w * srt[lo + 1]
        np.testing.assert_allclose(env[f"P{q}"], oracle, atol=1e-12)


# -- distances -------------------------------------------------------------


def test_w1_identity_and_shift():
    a = np.random.default_rng(0).normal(size=500)
    assert wasserstein1(a, a) == 0.0
    assert wasserstein1(a, a + 0.37) == pytest.approx(0.37, abs=1e-12)
    assert wasserstein1(a, a - 2.0) == pytest.approx(2.0, abs=1e-12)


def test_w1_normal_shift_at_ten_thousand_samples():
    rng = np.random.default_rng(2024)
    a = rng.normal(0.0, 1.0, 10_000)
    b = rng.normal(1.0, 1.0, 10_000)
    assert abs(wasserstein1(a, b) - 1.0) <= 0.03


def test_w1_matches_scipy_and_metric_axioms():
    rng = np.random.default_rng(7)
    for _ in range(10):
        a, b, c = rng.normal(size=80), rng.exponential(size=55), rng.uniform(-1, 2, size=120)
        assert wasserstein1(a, b) == pytest.approx(stats.wasserstein_distance(a, b), rel=1e-12)
        assert abs(wasserstein1(a, b) - wasserstein1(b, a)) <= 1e-12
        assert wasserstein1(a, c) <= wasserstein1(a, b) + wasserstein1(b, c) + 1e-12
    with pytest.raises(ParameterError):
        wasserstein1([], [1.0])


def test_kl_and_jsd_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert kl_divergence(p, p) == 0.0
    assert jsd(p, p) == 0.0
    assert kl_divergence([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2))
    by_hand = 0.5 * math.log(1 / 0.75) + 0.5 * (0.5 * math.log(0.5 / 0.75) + 0.5 * math.log(0.5 / 0.25))
    assert jsd([1, 0], [0.5, 0.5]) == pytest.approx(by_hand, rel=1e-12)
    assert kl_divergence([0.5, 0.5], [1, 0]) == float("inf")


def test_jsd_symmetric_and_bounded():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.random(8), rng.random(8)
        assert abs(jsd(a, b) - jsd(b, a)) <= 1e-12
        assert 0.0 <= jsd(a, b) <= math.log(2)
    assert jsd([1, 0], [0, 1]) == pytest.approx(math.log(2))


def test_histogram_pair_shares_bins():
    ha, hb, edges = histogram_pair(np.arange(10.0), np.arange(5.0, 15.0), bins=5)
    assert ha.sum() == pytest.approx(1) and hb.sum() == pytest.approx(1)
    assert edges[0] == 0 and edges[-1] == 14


# -- comparison --------------------------------------------------------------


def test_compare_with_itself_is_zero(trivial):
    g = small_grids()
    ens = run_ensemble(MOCModel(trivial), NARROW, 50, g, seed=1)
    rep = compare(ens, ens, trivial)
    for kind in ("front_radius", "breakthrough_time"):
        q = rep.qois[kind]
        assert q["avg_w1"] == 0.0 and q["relative_difference"] == 0.0
        assert q["avg_w1_uniform"] > 0.0
        assert q["anchors"] == list(g.profile_times if kind == "front_radius" else g.series_locations)
        assert all(j == 0.0 for j in q["jsd"])
    doc = json.loads(rep.to_json())
    assert doc["qois"]["front_radius"]["relative_difference"] == 0.0


def test_uniform_baseline_against_itself_is_one():
    ref = np.random.default_rng(0).normal(1.0, 0.2, 400)
    base = np.random.Generator(np.random.PCG64(9)).uniform(ref.min(), ref.max(), ref.size)
    out = compare_qoi([QOIDistribution("x", 0.1, ref, 0)], [QOIDistribution("x", 0.1, base, 0)], seed=9)
    assert out["relative_difference"] == pytest.approx(1.0, abs=1e-12)


def test_censoring_is_pairwise_and_reported():
    ref = np.array([0.1, 0.2, np.nan, 0.4])
    test = np.array([0.1, np.nan, 0.3, 0.4])
    out = compare_qoi([QOIDistribution("x", 1.0, ref, 1)], [QOIDistribution("x", 1.0, test, 1)])
    assert out["w1"] == [0.0]
    assert out["censored_reference"] == [1] and out["censored_test"] == [1]
    empty = np.full(3, np.nan)
    out = compare_qoi([QOIDistribution("x", 2.0, empty, 3)], [QOIDistribution("x", 2.0, empty, 3)])
    assert out["skipped"] == [2.0] and out["anchors"] == []
    assert math.isnan(out["relative_difference"])


def test_compare_requires_paired_ensembles(trivial):
    g = small_grids()
    a = run_ensemble(MOCModel(trivial), NARROW, 5, g, seed=1)
    b = run_ensemble(MOCModel(trivial), NARROW, 6, g, seed=1)
    with pytest.raises(ParameterError):
        compare(a, b, trivial)


def test_domain_baseline_spans_the_whole_window(trivial):
    g = small_grids()
    ens = run_ensemble(MOCModel(trivial), NARROW, 200, g, seed=1)
    rep = compare(ens, ens, trivial)
    q = rep.qois["front_radius"]
    assert q["baseline"] == "domain" and q["relative_difference_alt"] == 0.0
    # a concentrated sample set against U(0, 1) sits a quarter of the window away at best
    assert all(w >= 0.2 for w in q["w1_uniform"][:2])
    ranged = compare(ens, ens, trivial, baseline="range").qois["front_radius"]
    assert ranged["avg_w1_uniform"] < q["avg_w1_uniform"]
    with pytest.raises(ParameterError):
        compare(ens, ens, trivial, baseline="wide")


def test_fixed_support_baseline_against_itself_is_one():
    ref = np.random.default_rng(0).normal(0.5, 0.05, 300)
    base = np.random.Generator(np.random.PCG64(4)).uniform(0.0, 1.0, ref.size)
    out = compare_qoi([QOIDistribution("x", 0.1, ref, 0)], [QOIDistribution("x", 0.1, base, 0)], seed=4,
                      support=(0.0, 1.0))
    assert out["relative_difference"] == pytest.approx(1.0, abs=1e-12)
