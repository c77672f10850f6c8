import math

import mpmath
import numpy as np
import pytest

from stochbl import Grid1D, fvm_solve, moc_saturation
from stochbl.exceptions import ConfigurationError, ParameterError
from stochbl.moments import (
    SERIES_CUTOFF,
    MomentsConfig,
    covariance_bracket,
    error_metrics,
    integral_bracket,
    moments_fd_solve,
    moments_mc,
    moments_pinn_train,
    total_variation,
    velocity_std,
    vxx,
    vxx_integral,
)
from stochbl.pinn import TrainingConfig

mpmath.mp.dps = 60


def bracket_a_mp(x):
    x = mpmath.mpf(x)
    return mpmath.exp(-x) * (6 / x**2 + 18 / x**3 + 18 / x**4) + 3 / x**2 - 18 / x**4


def bracket_b_mp(x):
    x = mpmath.mpf(x)
    return -mpmath.exp(-x) * (6 / x**2 + 6 / x**3) - 3 / x + 6 / x**3 + 2


UNIT = MomentsConfig(v_bar=1.0, sigma_Y2=0.1, s=1.0)


# -- covariance closure --------------------------------------------------------


def test_vxx_at_three_matches_high_precision():
    expect = 0.5 * 0.1 * float(bracket_a_mp(3))
    assert vxx(3.0, UNIT) == pytest.approx(expect, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("x", [1e-4, 1e-3, 0.05, 0.0999, 0.1, 0.2, 1.0, 7.5])
def test_brackets_match_high_precision(x):
    assert covariance_bracket(x) == pytest.approx(float(bracket_a_mp(x)), rel=1e-8)
    assert integral_bracket(x) == pytest.approx(float(bracket_b_mp(x)), rel=1e-8)


def test_small_lag_limits():
    assert covariance_bracket(1e-4) == pytest.approx(0.75, rel=1e-3)
    assert integral_bracket(1e-12) == pytest.approx(0.0, abs=1e-10)
    assert np.isfinite(vxx(1e-4, UNIT))
    assert velocity_std(UNIT) == pytest.approx(math.sqrt(vxx(1e-9, UNIT)), rel=1e-8)


def test_series_branch_is_continuous_at_cutoff():
    lo, hi = np.nextafter(SERIES_CUTOFF, 0), SERIES_CUTOFF
    assert covariance_bracket(lo) == pytest.approx(covariance_bracket(hi), rel=1e-12)
    assert integral_bracket(lo) == pytest.approx(integral_bracket(hi), rel=1e-12)


def test_vxx_decays_at_large_lag():
    assert abs(vxx(50.0, UNIT)) <= 1e-3 * UNIT.v_bar**2 * UNIT.sigma_Y2


def test_vxx_scales_lag_by_correlation_length():
    cfg = MomentsConfig(v_bar=2.0, sigma_Y2=0.3, s=2.5)
    assert vxx(5.0, cfg) == pytest.approx(0.5 * 4.0 * 0.3 * covariance_bracket(2.0), rel=1e-14)
    assert vxx_integral(5.0, cfg) == pytest.approx(0.5 * 4.0 * 0.3 * 2.5 * integral_bracket(2.0), rel=1e-14)


def test_vxx_integral_is_nondecreasing():
    x = np.linspace(1e-3, 30, 5000)
    assert np.all(np.diff(vxx_integral(x, UNIT)) >= -1e-15)


def test_moments_config_validation():
    with pytest.raises(ParameterError, match="v_bar"):
        MomentsConfig(v_bar=0.0)
    with pytest.raises(ParameterError, match="sigma_Y2"):
        MomentsConfig(sigma_Y2=-1.0)


# -- finite differences ----------------------------------------------------------


def test_zero_variance_fd_reproduces_fvm(trivial):
    cfg = MomentsConfig(sigma_Y2=0.0)
    g = Grid1D(cfg.n_cells)
    sol = moments_fd_solve(cfg, trivial, dt=g.dx / 15)
    ref = fvm_solve(trivial, 1.0, g, 0.5, dt=g.dx / 15, snapshots=cfg.snapshots)
    assert np.max(np.abs(sol.mu - ref.S)) <= 1e-6
    assert np.all(sol.sigma == 0.0)


def test_fd_smooths_the_front(trivial):
    hyper = moments_fd_solve(MomentsConfig(sigma_Y2=0.0), trivial)
    para = moments_fd_solve(MomentsConfig(sigma_Y2=0.1, s=2.0), trivial)
    mu_h, _ = hyper.at(0.5)
    mu_p, sig_p = para.at(0.5)
    assert total_variation(mu_p) < total_variation(mu_h)
    # the jump is spread over many cells
    assert np.max(np.abs(np.diff(mu_p))) < 0.1 * np.max(np.abs(np.diff(mu_h)))
    assert np.all(sig_p >= 0.0) and sig_p.max() > 0.0
    assert np.all((para.mu >= 0.0) & (para.mu <= 1.0))


def test_fd_total_variation_does_not_grow(trivial):
    sol = moments_fd_solve(MomentsConfig(sigma_Y2=0.1, s=2.0), trivial)
    tv = [total_variation(np.concatenate([[trivial.S_inj], mu])) for mu in sol.mu]
    assert np.all(np.diff(tv) <= 1e-12)


def test_fd_mass_balance(trivial):
    sol = moments_fd_solve(MomentsConfig(sigma_Y2=0.1, s=2.0), trivial)
    assert sol.mass_error <= 1e-10


def test_fd_rejects_unstable_step(trivial):
    with pytest.raises(ConfigurationError, match="stability"):
        moments_fd_solve(MomentsConfig(), trivial, dt=0.1)


def test_solution_lookup(trivial):
    sol = moments_fd_solve(MomentsConfig(sigma_Y2=0.0, snapshots=(0.25,)), trivial)
    assert sol.at(0.25)[0].shape == (256,)
    with pytest.raises(ParameterError):
        sol.at(0.3)


# -- Monte Carlo -----------------------------------------------------------------


def test_mc_zero_variance_is_deterministic(trivial):
    cfg = MomentsConfig(sigma_Y2=0.0, n_cells=64, snapshots=(0.3,))
    sol = moments_mc(cfg, trivial, n=5)
    ref = fvm_solve(trivial, 1.0, Grid1D(64), 0.3, snapshots=(0.3,))
    np.testing.assert_allclose(sol.mu, ref.S, atol=1e-12)
    assert np.max(sol.sigma) <= 1e-7


def test_mc_agrees_with_fd(trivial):
    cfg = MomentsConfig(sigma_Y2=0.1, s=2.0, n_cells=128, snapshots=(0.5,))
    mc = moments_mc(cfg, trivial, n=200, seed=4)
    fd = moments_fd_solve(cfg, trivial)
    _, r = error_metrics(fd.at(0.5)[0], mc.at(0.5)[0])
    assert r >= 0.95


# -- PINN ------------------------------------------------------------------------


def test_moments_pinn_rejects_parameter_inputs(trivial):
    with pytest.raises(ParameterError):
        moments_pinn_train(MomentsConfig(), trivial, TrainingConfig(theta_ranges=((0, 1),), iterations=0))


def test_moments_pinn_is_deterministic(trivial):
    tcfg = TrainingConfig(depth=2, width=8, n_samples=64, iterations=5)
    a = moments_pinn_train(MomentsConfig(), trivial, tcfg)
    b = moments_pinn_train(MomentsConfig(), trivial, tcfg)
    assert np.array_equal(a.extra["history"], b.extra["history"])
    assert np.all(a.sigma > 0.0)


def test_moments_pinn_degenerate_case(trivial):
    cfg = MomentsConfig(sigma_Y2=0.0)
    tcfg = TrainingConfig(depth=4, width=20, n_samples=1000, iterations=1500, lr_final_factor=0.1)
    sol = moments_pinn_train(cfg, trivial, tcfg)
    mu, sig = sol.at(0.5)
    ref = moc_saturation(trivial, 1.0, sol.x, 0.5)
    _, r = error_metrics(mu, ref)
    assert r >= 0.95
    assert np.mean(np.abs(mu - ref)) <= 0.06
    # softplus(0) = ln 2 at initialization; the penalties drive it toward zero
    assert sig.max() <= math.log(2) / 50


# -- metrics ---------------------------------------------------------------------


def test_error_metrics_examples():
    rng = np.random.default_rng(0)
    y = rng.normal(size=(5, 40))
    e, r = error_metrics(y, y)
    assert np.all(e == 0) and r == pytest.approx(1.0, abs=1e-15)
    z = y - y.mean()
    assert error_metrics(-z, z)[1] == pytest.approx(-1.0, abs=1e-15)
    a, b = rng.normal(size=300), rng.normal(size=300)
    # two-pass covariance as an independent implementation
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    cov = sum((u - ma) * (w - mb) for u, w in zip(a, b))
    va = sum((u - ma) ** 2 for u in a)
    vb = sum((w - mb) ** 2 for w in b)
    assert error_metrics(a, b)[1] == pytest.approx(cov / math.sqrt(va * vb), abs=1e-12)


def test_error_metrics_flags_zero_variance():
    with pytest.warns(RuntimeWarning):
        _, r = error_metrics(np.ones(10), np.arange(10.0))
    assert math.isnan(r)
    with pytest.raises(ParameterError):
        error_metrics(np.ones(3), np.ones(4))
