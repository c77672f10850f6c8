"""Statistical-moment equations for transport in a random log-normal velocity field.

A first-order perturbation of the transport equation around the mean
velocity gives a parabolic equation for the mean saturation ``mu`` whose
diffusion coefficient is ``f'(mu)^2 I(x) / v_bar`` with ``I`` the integral of
the velocity covariance, and an advection equation for the fluctuation
amplitude ``sigma``.  Both are solved by explicit finite differences and by a
two-output physics-informed network; a Monte Carlo ensemble over sampled
fields serves as the reference.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import torch

from .exceptions import ConfigurationError, ParameterError
from .fields import ExpCovVelocity, realization_rngs
from .fvm import Grid1D, fvm_solve
from .physics import (
    FluidParams,
    fractional_flow,
    fractional_flow_derivative,
    hull_eval,
    welge_hull,
)
from .pinn.training import (
    TrainingConfig,
    _check_finite,
    build_model,
    draw_samples,
    flux_derivative_torch,
    flux_torch,
)

__all__ = [
    "MomentsConfig",
    "MomentsSolution",
    "covariance_bracket",
    "integral_bracket",
    "vxx",
    "vxx_integral",
    "velocity_std",
    "moments_fd_solve",
    "moments_loss_terms",
    "moments_pinn_train",
    "moments_mc",
    "error_metrics",
    "total_variation",
]

SERIES_CUTOFF = 0.1
_N_SERIES = 16


def _series_coefficients():
    """Taylor coefficients of both brackets about 0.

    ``x^4 A(x) = e^{-x}(6x^2 + 18x + 18) + 3x^2 - 18`` and
    ``x^3 B(x) = -e^{-x}(6x + 6) - 3x^2 + 6 + 2x^3``; the low orders cancel
    exactly, leaving regular power series.
    """

    def e(m):  # coefficient of x^m in e^{-x}
        return Fraction((-1) ** m, math.factorial(m)) if m >= 0 else Fraction(0)

    a = [6 * e(n + 2) + 18 * e(n + 3) + 18 * e(n + 4) for n in range(_N_SERIES)]
    b = [-6 * e(n + 2) - 6 * e(n + 3) for n in range(_N_SERIES)]
    b[0] += 2  # from the 2 x^3 term
    return np.array([float(c) for c in a]), np.array([float(c) for c in b])


_A_COEF, _B_COEF = _series_coefficients()


def covariance_bracket(xi):
    """``e^{-xi}(6/xi^2 + 18/xi^3 + 18/xi^4) + 3/xi^2 - 18/xi^4``; tends to 3/4 at 0."""
    xi = np.abs(np.asarray(xi, dtype=float))
    out = np.empty(xi.shape)
    small = xi < SERIES_CUTOFF
    xs = xi[small]
    out[small] = np.polynomial.polynomial.polyval(xs, _A_COEF)
    xl = xi[~small]
    out[~small] = np.exp(-xl) * (6 / xl**2 + 18 / xl**3 + 18 / xl**4) + 3 / xl**2 - 18 / xl**4
    return out if out.ndim else float(out)


def integral_bracket(xi):
    """``-e^{-xi}(6/xi^2 + 6/xi^3) - 3/xi + 6/xi^3 + 2``; 0 at 0, tends to 2."""
    xi = np.abs(np.asarray(xi, dtype=float))
    out = np.empty(xi.shape)
    small = xi < SERIES_CUTOFF
    xs = xi[small]
    out[small] = np.polynomial.polynomial.polyval(xs, _B_COEF)
    xl = xi[~small]
    out[~small] = -np.exp(-xl) * (6 / xl**2 + 6 / xl**3) - 3 / xl + 6 / xl**3 + 2
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MomentsConfig:
    v_bar: float = 1.0
    sigma_Y2: float = 0.1
    s: float = 2.0
    n_cells: int = 256
    x_max: float = 1.0
    t_end: float = 1.0
    snapshots: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)

    def __post_init__(self):
        errs = []
        if not self.v_bar > 0:
            errs.append("v_bar must be > 0")
        if self.sigma_Y2 < 0:
            errs.append("sigma_Y2 must be >= 0")
        if not self.s > 0:
            errs.append("s must be > 0")
        if errs:
            raise ParameterError("invalid MomentsConfig: " + "; ".join(errs))

    @property
    def grid(self):
        return Grid1D(self.n_cells, self.x_max)


def vxx(x, cfg: MomentsConfig):
    """Longitudinal velocity covariance at lag ``x`` (scaled by ``s`` internally)."""
    return 0.5 * cfg.v_bar**2 * cfg.sigma_Y2 * covariance_bracket(np.asarray(x, float) / cfg.s)


def vxx_integral(x, cfg: MomentsConfig):
    """``int_0^x vxx``: the closed form ``(v_bar^2/2) sigma_Y2 s B(x/s)``."""
    return 0.5 * cfg.v_bar**2 * cfg.sigma_Y2 * cfg.s * integral_bracket(np.asarray(x, float) / cfg.s)


def velocity_std(cfg: MomentsConfig) -> float:
    """Point standard deviation of the velocity, ``sqrt(vxx(0+))``."""
    return math.sqrt(0.5 * cfg.v_bar**2 * cfg.sigma_Y2 * 0.75)


@dataclass
class MomentsSolution:
    x: np.ndarray
    t: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    provenance: str
    dt: float = float("nan")
    mass_error: float = float("nan")
    extra: dict = field(default_factory=dict)

    def at(self, t):
        k = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[k] - t) > 1e-9:
            raise ParameterError(f"no stored time {t}")
        return self.mu[k], self.sigma[k]


def _hull_arrays(h, p, S):
    F, dF = hull_eval(h, p, S)
    return np.asarray(F, float), np.asarray(dF, float)


def moments_fd_solve(cfg: MomentsConfig, p: FluidParams, dt=None, snapshots=None) -> MomentsSolution:
    """Explicit finite differences for the mean and fluctuation equations.

    Mean: Godunov upwind advection of ``v_bar f(mu)`` plus central
    differencing of ``d/dx(D d mu/dx)`` with ``D = hull'(mu)^2 I(x)/v_bar``.
    Fluctuation: upwind transport of ``hull'(mu) v_bar sigma + hull(mu) dv mu``
    with ``sigma(0, t) = 0``, clipped at zero.
    """
    g = cfg.grid
    h = welge_hull(p)
    dx = g.dx
    x_face = np.arange(g.n_cells + 1) * dx
    I_face = vxx_integral(x_face, cfg)
    max_fp = float(np.max(_raw_speed(p)))
    max_hull = h.sigma  # hull derivative is largest on the chord
    D_bound = max_hull**2 * float(np.max(I_face)) / cfg.v_bar
    dt_adv = dx / (cfg.v_bar * max_fp)
    dt_diff = dx * dx / (2.0 * D_bound) if D_bound > 0 else math.inf
    bound = min(dt_adv, dt_diff)
    if dt is None:
        dt = 0.8 * bound
    dt = float(dt)
    if not 0 < dt <= bound * (1 + 1e-12):
        raise ConfigurationError(f"dt={dt:.3e} violates the stability bound {bound:.3e}")
    snaps = np.asarray(cfg.snapshots if snapshots is None else snapshots, float)
    dv = velocity_std(cfg)

    mu = np.full(g.n_cells, p.S_init)
    sig = np.zeros(g.n_cells)
    f_inj = float(fractional_flow(p.S_inj, p))
    F_inj_hull = float(hull_eval(h, p, p.S_inj)[0])
    acc_in = acc_out = 0.0
    t = 0.0
    out_mu, out_sig = [], []
    for target in snaps:
        n_full = math.floor((target - t) / dt + 1e-9)
        steps = [dt] * n_full
        rem = (target - t) - n_full * dt
        if rem > 1e-12 * max(1.0, target):
            steps.append(rem)
        for step in steps:
            F = fractional_flow(mu, p)
            flux_left = np.empty_like(mu)
            flux_left[0] = f_inj
            flux_left[1:] = F[:-1]
            adv = (step / dx) * cfg.v_bar * (F - flux_left)
            if D_bound > 0:
                mu_face = np.empty(g.n_cells + 1)
                mu_face[1:-1] = 0.5 * (mu[1:] + mu[:-1])
                mu_face[0] = p.S_inj
                mu_face[-1] = mu[-1]
                _, dF_face = _hull_arrays(h, p, mu_face)
                D = dF_face**2 * I_face / cfg.v_bar
                grad = np.empty(g.n_cells + 1)
                grad[1:-1] = (mu[1:] - mu[:-1]) / dx
                grad[0] = (mu[0] - p.S_inj) / (0.5 * dx)
                grad[-1] = 0.0
                dflux = D * grad
                mu_new = mu - adv + (step / dx) * (dflux[1:] - dflux[:-1])
                acc_in += step * (cfg.v_bar * f_inj - dflux[0])
            else:
                mu_new = mu - adv
                acc_in += step * cfg.v_bar * f_inj
            acc_out += step * cfg.v_bar * F[-1]

            # fluctuation transport with the pre-step mean
            Fh, dFh = _hull_arrays(h, p, mu)
            G = dFh * cfg.v_bar * sig + Fh * dv * mu
            G_left = np.empty_like(G)
            G_left[0] = F_inj_hull * dv * p.S_inj
            G_left[1:] = G[:-1]
            sig = np.maximum(sig - (step / dx) * (G - G_left), 0.0)
            mu = mu_new
        t = float(target)
        out_mu.append(mu.copy())
        out_sig.append(sig.copy())
    storage = float(np.sum(mu) * dx - g.n_cells * p.S_init * dx)
    mass_err = abs(acc_in - acc_out - storage) / acc_in if acc_in > 0 else 0.0
    return MomentsSolution(g.centers, snaps, np.array(out_mu), np.array(out_sig), "FD", dt, mass_err)


def _raw_speed(p, n=10001):
    return fractional_flow_derivative(np.linspace(p.S_init, p.S_inj, n), p)


def total_variation(u):
    return float(np.sum(np.abs(np.diff(np.asarray(u, float)))))


# -- PINN ------------------------------------------------------------------------


def _hull_parts_torch(mu, p, h):
    """Hull flux, first and second derivative of the mean saturation."""
    m = mu.clamp(h.S_init, h.S_inj)
    chord = m < h.S_BL
    F = torch.where(chord, h.f_init + h.sigma * (m - h.S_init), flux_torch(m, p))
    dF = torch.where(chord, torch.full_like(m, h.sigma), flux_derivative_torch(m, p))
    d2F = torch.where(chord, torch.zeros_like(m), _flux_second_torch(m, p))
    return F, dF, d2F


def _flux_second_torch(S, p):
    S = S.clamp(p.s_min, p.s_max)
    a = S - p.S_wc
    b = 1.0 - S - p.S_nr
    den = a * a + b * b / p.M
    c = 1.0 - p.S_wc - p.S_nr
    dden = 2.0 * a - 2.0 * b / p.M
    return (2.0 * c / p.M) * ((b - a) / den**2 - 2.0 * a * b * dden / den**3)


def _bracket_torch(xi, coef, direct):
    small = xi < SERIES_CUTOFF
    xs = torch.where(small, xi, torch.zeros_like(xi))
    xl = torch.where(small, torch.ones_like(xi), xi)
    ser = torch.zeros_like(xi)
    for c in coef[::-1]:
        ser = ser * xs + float(c)
    return torch.where(small, ser, direct(xl))


def _I_and_vxx_torch(x, cfg):
    xi = x.abs() / cfg.s
    A = _bracket_torch(
        xi, _A_COEF, lambda z: torch.exp(-z) * (6 / z**2 + 18 / z**3 + 18 / z**4) + 3 / z**2 - 18 / z**4
    )
    B = _bracket_torch(xi, _B_COEF, lambda z: -torch.exp(-z) * (6 / z**2 + 6 / z**3) - 3 / z + 6 / z**3 + 2)
    k = 0.5 * cfg.v_bar**2 * cfg.sigma_Y2
    return k * cfg.s * B, k * A


def moments_loss_terms(model, batch, p: FluidParams, cfg: MomentsConfig):
    """Summed squared residuals of both moment equations plus IC/BC terms."""
    h = welge_hull(p)
    interior = torch.as_tensor(batch.interior, dtype=model.torch_dtype)
    initial = torch.as_tensor(batch.initial, dtype=model.torch_dtype)
    boundary = torch.as_tensor(batch.boundary, dtype=model.torch_dtype)
    n = interior.shape[0]
    jet = model.jet(torch.cat([interior, initial]), derivatives=True, second=True)
    mu, mu_x, mu_t, mu_xx = (a[:n, 0] for a in (jet.value, jet.dx, jet.dt, jet.dxx))
    r_s, r_sx, r_st = jet.value[:n, 1], jet.dx[:n, 1], jet.dt[:n, 1]
    sp = torch.nn.functional.softplus
    sig = sp(r_s)
    gate = torch.sigmoid(r_s)
    sig_x, sig_t = gate * r_sx, gate * r_st

    F, dF, d2F = _hull_parts_torch(mu, p, h)
    I, V = _I_and_vxx_torch(interior[:, 0], cfg)
    D = dF * dF * I / cfg.v_bar
    D_x = 2.0 * dF * d2F * mu_x * I / cfg.v_bar + dF * dF * V / cfg.v_bar
    r_mu = mu_t + cfg.v_bar * dF * mu_x - (D_x * mu_x + D * mu_xx)
    dv = velocity_std(cfg)
    r_sig = sig_t + cfg.v_bar * (d2F * mu_x * sig + dF * sig_x) + dv * (dF * mu_x * mu + F * mu_x)
    _check_finite("mean residual", r_mu, interior)
    _check_finite("fluctuation residual", r_sig, interior)

    mu0, mu0_t = jet.value[n:, 0], jet.dt[n:, 0]
    sig0 = sp(jet.value[n:, 1])
    ic = ((mu0 - p.S_init) ** 2 + mu0_t**2 + sig0**2).sum()
    ob = model(boundary)
    bc = ((ob[:, 0] - p.S_inj) ** 2 + sp(ob[:, 1]) ** 2).sum()
    return {
        "mu": (r_mu * r_mu).sum(),
        "sigma": (r_sig * r_sig).sum(),
        "ic": ic,
        "bc": bc,
    }, {"mu": n, "sigma": n, "ic": initial.shape[0], "bc": boundary.shape[0]}


def _eval_moments_model(model, x, t):
    X, T = np.meshgrid(x, t)
    out = model.predict_numpy(np.column_stack([X.ravel(), T.ravel()]))
    mu = out[:, 0].reshape(X.shape)
    sig = np.logaddexp(0.0, out[:, 1]).reshape(X.shape)
    return mu, sig


def moments_pinn_train(cfg: MomentsConfig, p: FluidParams, tcfg: TrainingConfig | None = None,
                       x_eval=None) -> MomentsSolution:
    """Train a two-output network ``(mu, raw sigma)`` on both moment equations.

    ``sigma`` is the softplus of the second output so it is positive by
    construction.  The per-iteration losses are returned in ``extra``.
    """
    tcfg = tcfg if tcfg is not None else TrainingConfig(theta_ranges=())
    if tcfg.theta_ranges:
        raise ParameterError("the moments network takes (x, t) only")
    model = build_model(tcfg, n_outputs=2)
    rng = np.random.Generator(np.random.PCG64(tcfg.seed))
    batch = draw_samples(tcfg, rng)
    opt = torch.optim.Adam([q for q in model.parameters() if q.requires_grad], lr=tcfg.lr)
    n_it = tcfg.iterations
    sched = None
    if tcfg.lr_final_factor < 1.0 and n_it > 0:
        start, span, ff = n_it // 4, max(1, n_it - n_it // 4), tcfg.lr_final_factor
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda k: ff ** (min(span, max(0, k - start)) / span))
    keys = ("mu", "sigma", "ic", "bc")
    hist = []
    for it in range(n_it):
        terms, counts = moments_loss_terms(model, batch, p, cfg)
        loss = sum(terms[k] / counts[k] for k in keys)
        hist.append([float(loss.detach())] + [float(terms[k].detach()) / counts[k] for k in keys])
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if sched is not None:
            sched.step()
    x = cfg.grid.centers if x_eval is None else np.asarray(x_eval, float)
    t = np.asarray(cfg.snapshots, float)
    mu, sig = _eval_moments_model(model, x, t)
    return MomentsSolution(
        x,
        t,
        np.clip(mu, 0.0, 1.0),
        sig,
        "PINN",
        extra={"history": np.array(hist).reshape(len(hist), 5), "columns": ("total",) + keys, "model": model},
    )


def moments_mc(cfg: MomentsConfig, p: FluidParams, n=500, seed=0, dt="fixed", chunk=100) -> MomentsSolution:
    """Mean and standard deviation of FVM saturations over sampled log-normal fields."""
    g = cfg.grid
    par = ExpCovVelocity(cfg.v_bar, cfg.sigma_Y2, cfg.s)
    samples = [par.sample(rng, g) for rng in realization_rngs(seed, n)]
    V = np.stack([s.v_cells for s in samples])
    snaps = np.asarray(cfg.snapshots, float)
    if dt == "fixed":
        # dx/15 is only stable while max(v) * max f' <= 15
        dt = "auto" if float(V.max()) * float(np.max(_raw_speed(p))) > 15.0 else "fixed"
    total = np.zeros((len(snaps), g.n_cells))
    sq = np.zeros_like(total)
    for k in range(0, n, chunk):
        res = fvm_solve(p, V[k : k + chunk], g, float(snaps[-1]), dt=dt, snapshots=snaps,
                        cfl_safety=0.9)
        total += res.S.sum(axis=1)
        sq += (res.S**2).sum(axis=1)
    mean = total / n
    var = np.maximum(sq / n - mean**2, 0.0)
    return MomentsSolution(g.centers, snaps, mean, np.sqrt(var), "MC", extra={"n": n})


def error_metrics(y, y_ref):
    """Pointwise absolute error and the Pearson correlation of two fields.

    ``r`` is NaN (with a warning) when either field has zero variance.
    """
    y = np.asarray(y, float)
    y_ref = np.asarray(y_ref, float)
    if y.shape != y_ref.shape:
        raise ParameterError("fields must have matching shapes")
    e_std = np.sqrt((y - y_ref) ** 2)
    a = y.ravel() - y.mean()
    b = y_ref.ravel() - y_ref.mean()
    den = math.sqrt(float(np.sum(a * a)) * float(np.sum(b * b)))
    if den == 0.0:
        warnings.warn("zero-variance input: correlation undefined", RuntimeWarning, stacklevel=2)
        return e_std, float("nan")
    return e_std, float(np.sum(a * b) / den)
