import math

import numpy as np
import pytest
from scipy import integrate, stats

from stochbl.exceptions import NumericalError, ParameterError, SamplingError
from stochbl.fields import (
    Affine,
    AffineVelocity,
    BimodalMixture,
    Constant,
    ConstantVelocity,
    ExpCovVelocity,
    FixedFieldVelocity,
    FourierSeries,
    FourierVelocity,
    Gridded,
    HighFreqCosine,
    LocalNormalVelocity,
    Periodic,
    PeriodicVelocity,
    TanhStairs,
    TruncatedNormal,
    Uniform,
    box_muller_pair,
    eval_field,
    exp_covariance,
    field_to_csv,
    make_rng,
    realization_rngs,
    sample_expcov_field,
    sample_scalar,
    truncated_normal_mean,
)
from stochbl.fields import _cholesky_with_jitter
from stochbl.fvm import Grid1D

NARROW = TruncatedNormal(1.0, 0.3, 0.5, 2.0)


def quadrature_mean(d):
    dens = stats.norm(d.mu, d.sigma).pdf
    z, _ = integrate.quad(dens, d.low, d.up)
    m, _ = integrate.quad(lambda v: v * dens(v), d.low, d.up)
    return m / z


def test_uniform_reproducible():
    a = sample_scalar(Uniform(0, 1), make_rng(42), size=1000)
    b = sample_scalar(Uniform(0, 1), make_rng(42), size=1000)
    np.testing.assert_array_equal(a, b)
    assert np.all((a >= 0) & (a < 1))


def test_truncated_normal_mean_matches_quadrature():
    x = sample_scalar(NARROW, make_rng(0), size=100_000)
    assert x.min() >= 0.5 and x.max() <= 2.0
    ref = quadrature_mean(NARROW)
    assert abs(x.mean() - ref) <= 0.01
    assert truncated_normal_mean(NARROW) == pytest.approx(ref, abs=1e-10)


def test_bimodal_has_modes_at_component_means():
    comps = (TruncatedNormal(0.8, 0.15, 0.5, 2.0), TruncatedNormal(1.6, 0.15, 0.5, 2.0))
    d = BimodalMixture((0.5, 0.5), comps)
    x = sample_scalar(d, make_rng(1), size=100_000)
    hist, edges = np.histogram(x, bins=60, range=(0.5, 2.0))
    centers = 0.5 * (edges[1:] + edges[:-1])
    peaks = [i for i in range(1, len(hist) - 1) if hist[i] >= hist[i - 1] and hist[i] >= hist[i + 1] and hist[i] > 0.5 * hist.max()]
    width = edges[1] - edges[0]
    found = sorted(centers[peaks])
    assert len(found) >= 2
    for c in comps:
        assert min(abs(f - quadrature_mean(c)) for f in found) <= 2 * width
    lo = x[x < 1.2]
    assert abs(lo.mean() - quadrature_mean(comps[0])) < 0.02


def test_distribution_validation():
    with pytest.raises(ParameterError):
        TruncatedNormal(1, 0.3, 2.0, 0.5)
    with pytest.raises(ParameterError):
        TruncatedNormal(1, 0.0)
    with pytest.raises(ParameterError):
        Uniform(1, 1)
    with pytest.raises(ParameterError):
        BimodalMixture((0.7, 0.7), (NARROW, NARROW))


def test_pathological_truncation_raises():
    d = TruncatedNormal(0.0, 1.0, 30.0, 31.0)
    with pytest.raises(SamplingError):
        sample_scalar(d, make_rng(0))


def test_truncation_never_violated():
    d = TruncatedNormal(4.0, 2.0, 0.1, 10.0)
    x = sample_scalar(d, make_rng(9), size=50_000)
    assert x.min() >= 0.1 and x.max() <= 10.0


def test_box_muller_fixed_values():
    assert box_muller_pair(1.0, 0.3) == 0.0
    assert box_muller_pair(math.exp(-0.5), 0.0) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ParameterError):
        box_muller_pair(0.0, 0.1)


def test_box_muller_moments():
    rng = make_rng(123)
    z = box_muller_pair(1.0 - rng.random(100_000), rng.random(100_000))
    assert abs(z.mean()) <= 0.02
    assert 0.97 <= z.var() <= 1.03


def test_eval_field_variants():
    assert eval_field(Constant(2.0), 0.37) == 2.0
    assert eval_field(Affine(1.0, 0.5), 0.5) == 1.0
    assert eval_field(HighFreqCosine(), 0.0) == 2.5
    assert eval_field(Periodic(2.0, 25.0, 1.5), 0.1) == pytest.approx(2.0 * math.sin(2.5) + 1.5)
    x = 0.13
    ref = 3.0 * sum(t * math.sin(2 * math.pi * k * x) for k, t in enumerate([0.1, 0.2, 0.3], start=1)) + 2.0
    assert eval_field(FourierSeries((0.1, 0.2, 0.3), 3.0, 2.0), x) == pytest.approx(ref)
    g = Gridded((1.0, 2.0, 3.0, 4.0))
    np.testing.assert_array_equal(eval_field(g, [0.0, 0.3, 0.6, 1.0]), [1.0, 2.0, 3.0, 4.0])


def test_tanh_stairs_levels():
    # plateaus of the staircase away from the transitions
    np.testing.assert_allclose(eval_field(TanhStairs(), [0.1, 0.4, 0.6, 0.9]), [2.5, 2.0, 2.5, 3.0], atol=1e-6)


def test_expcov_zero_variance_is_constant():
    smp = sample_expcov_field(0.0, 2.0, 1.3, Grid1D(32), make_rng(0))
    np.testing.assert_array_equal(smp.v_cells, 1.3)


def test_expcov_empirical_correlation_and_mean():
    g = Grid1D(64)
    samples = sample_expcov_field(0.1, 2.0, 1.0, g, make_rng(7), size=10_000)
    Y = np.stack([s.theta for s in samples])
    V = np.stack([s.v_cells for s in samples])
    C = np.corrcoef(Y, rowvar=False)
    for k in (1, 4, 16, 40):
        emp = np.mean(np.diagonal(C, offset=k))
        assert abs(emp - math.exp(-k * g.dx / 2.0)) <= 0.05
    assert abs(V.mean() - 1.0) <= 0.01
    assert np.all(V > 0)


def test_expcov_parameter_checks():
    with pytest.raises(ParameterError):
        sample_expcov_field(-0.1, 2.0, 1.0, Grid1D(8), make_rng(0))
    with pytest.raises(ParameterError):
        sample_expcov_field(0.1, 0.0, 1.0, Grid1D(8), make_rng(0))


def test_cholesky_failure_is_numerical_error():
    C = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NumericalError):
        _cholesky_with_jitter(C)


def test_exp_covariance_shape():
    x = np.linspace(0, 1, 5)
    C = exp_covariance(x, 0.1, 2.0)
    assert C[0, 0] == pytest.approx(0.1)
    assert C[0, 4] == pytest.approx(0.1 * math.exp(-0.5))


def test_realization_streams_are_deterministic_and_distinct():
    a = [r.random() for r in realization_rngs(5, 4)]
    b = [r.random() for r in realization_rngs(5, 4)]
    assert a == b
    assert len(set(a)) == 4


@pytest.mark.parametrize(
    "par",
    [
        ConstantVelocity(NARROW),
        AffineVelocity(TruncatedNormal(1.0, 0.3), 0.5),
        PeriodicVelocity(TruncatedNormal(1.0, 0.3), 1.0, 0.5),
        PeriodicVelocity(TruncatedNormal(1.0, 0.3, 0.5, 1.3), 25.0, 1.5),
        FourierVelocity(Uniform(0, 1), 5, 1.0, 1.0),
        FourierVelocity(Uniform(0, 3), 5, 1.0, 2.0),
        LocalNormalVelocity(TruncatedNormal(1.0, 0.2, 0.5, 2.0)),
        ExpCovVelocity(1.0, 0.1, 2.0),
        FixedFieldVelocity(TanhStairs()),
    ],
)
def test_samples_are_positive_and_sized(par):
    g = Grid1D(64)
    for rng in realization_rngs(0, 20):
        smp = par.sample(rng, g)
        assert smp.v_cells.shape == (64,)
        assert np.all(smp.v_cells > 0)
        assert np.all(eval_field(smp.spec, np.linspace(0, 1, 1000)) > 0)
        if par.dim and not isinstance(par, LocalNormalVelocity):
            assert smp.theta.shape == (par.dim,)
        assert len(par.theta_ranges()) == par.dim


def test_torch_velocity_matches_numpy():
    torch = pytest.importorskip("torch")
    x = np.linspace(0, 1, 7)
    for par, theta in [
        (AffineVelocity(NARROW, 0.5), [1.3]),
        (PeriodicVelocity(NARROW, 25.0, 1.5), [0.9]),
        (FourierVelocity(Uniform(0, 1), 5, 1.0, 1.0), [0.1, 0.5, 0.2, 0.9, 0.3]),
        (FixedFieldVelocity(TanhStairs()), []),
        (FixedFieldVelocity(HighFreqCosine()), []),
    ]:
        th = torch.tensor([theta] * len(x), dtype=torch.float64).reshape(len(x), len(theta))
        got = par.velocity_torch(torch.tensor(x), th).numpy()
        np.testing.assert_allclose(got, par.velocity_np(x, theta), rtol=1e-12)


def test_local_normal_theta_is_local_velocity():
    par = LocalNormalVelocity(TruncatedNormal(1.0, 0.2, 0.5, 2.0))
    g = Grid1D(16)
    smp = par.sample(make_rng(3), g)
    th = par.theta_at(smp, g.centers)
    np.testing.assert_array_equal(th[:, 0], smp.v_cells)


def test_fixed_field_rejects_non_positive():
    with pytest.raises(SamplingError):
        FixedFieldVelocity(Affine(-2.0, 0.5)).sample(make_rng(0), Grid1D(8))


def test_field_csv(tmp_path):
    smp = ConstantVelocity(NARROW).sample(make_rng(0), Grid1D(8))
    path = tmp_path / "f.csv"
    field_to_csv(smp, np.linspace(0, 1, 5), path)
    rows = path.read_text().splitlines()
    assert rows[0] == "x,v_d"
    assert len(rows) == 6


def test_positive_mask_matches_pointwise_scan():
    from stochbl.fields import _Parameterization

    rng = np.random.default_rng(8)
    four = FourierVelocity(Uniform(0.0, 1.0), n_modes=5, amplitude=1.0, b=1.0)
    th = rng.random((400, 5))
    fast = four.positive_mask(th)
    assert np.array_equal(fast, _Parameterization.positive_mask(four, th))
    x = np.linspace(0.0, 1.0, 1000)
    assert np.array_equal(fast, [bool(np.all(four.velocity_np(x, t) > 0)) for t in th])
    per = PeriodicVelocity(TruncatedNormal(1.0, 0.3), k=25.0, b=0.5)
    assert list(per.positive_mask([[0.2], [1.0]])) == [True, False]
