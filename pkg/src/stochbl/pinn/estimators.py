"""Estimator-style wrappers: the parameterized surrogate, the velocity subnetwork
and the shock-state/velocity correlation."""

from __future__ import annotations

import warnings

import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import FitError, ParameterError, TrainingError
from ..physics import FluidParams, fractional_flow, welge_hull
from .network import InputNormalizer, SurrogateModel
from .training import FieldContext, TrainingConfig, infer_profile, train

__all__ = [
    "ParameterizedPINN",
    "VelocityNet",
    "fit_velocity_net",
    "HullCorrelation",
    "detect_shock",
    "fit_hull_correlation",
]


class ParameterizedPINN(BaseEstimator, RegressorMixin):
    """Surrogate ``S(x, t, theta)`` trained once from physics losses alone.

    ``fit`` needs no targets: the training points are drawn from
    ``config`` ranges.  ``predict`` takes rows ``(x, t, theta...)``.

    With ``config.velocity_net`` the velocity enters through a subnetwork
    that is pre-fitted to ``velocity_data = (x, v)`` (sampled from the
    parameterization when omitted) and then trained jointly.  With
    ``config.hull_mode == "correlated"`` a fitted ``hull_correlation`` is
    required.
    """

    def __init__(self, fluid=None, parameterization=None, config=None, velocity=None,
                 velocity_data=None, hull_correlation=None):
        self.fluid = fluid
        self.parameterization = parameterization
        self.config = config
        self.velocity = velocity
        self.velocity_data = velocity_data
        self.hull_correlation = hull_correlation

    def _velocity_samples(self, cfg):
        if self.velocity_data is not None:
            x, v = (np.asarray(a, float).reshape(-1) for a in self.velocity_data)
            return x, v
        if self.parameterization is None or self.parameterization.dim:
            raise ParameterError("velocity_net needs velocity_data or a fixed (parameter-free) field")
        x = np.linspace(cfg.x_range[0], cfg.x_range[1], 2000)
        return x, np.asarray(self.parameterization.velocity_np(x, ()), float)

    def _context(self, cfg):
        hull = welge_hull(self.fluid_)
        hc = self.hull_correlation
        if cfg.hull_mode == "correlated" and hc is None:
            raise ParameterError("hull_mode='correlated' needs a fitted hull_correlation")
        if cfg.velocity_net:
            x, v = self._velocity_samples(cfg)
            net = VelocityNet(seed=cfg.seed, x_range=cfg.x_range, dtype=cfg.dtype).fit(x, v)
            self.velocity_net_ = net
            return FieldContext(velocity_model=net.model_, velocity_data=(x, v), hull=hull, hull_correlation=hc)
        if self.velocity is not None:
            return FieldContext(velocity=self.velocity, hull=hull, hull_correlation=hc)
        if self.parameterization is None:
            raise ParameterError("either parameterization or velocity is required")
        par = self.parameterization
        accept = par.positive_mask if cfg.positive_theta and par.dim else None
        return FieldContext(velocity=par.velocity_torch, hull=hull, hull_correlation=hc, theta_accept=accept)

    def fit(self, X=None, y=None):
        self.fluid_ = self.fluid if self.fluid is not None else FluidParams()
        cfg = self.config if self.config is not None else TrainingConfig()
        if not cfg.theta_ranges and self.parameterization is not None and self.parameterization.dim:
            cfg = TrainingConfig(**{**cfg.__dict__, "theta_ranges": tuple(self.parameterization.theta_ranges())})
        self.config_ = cfg
        res = train(cfg, self.fluid_, self._context(cfg))
        self.model_ = res.model
        self.history_ = res.history
        self.history_columns_ = res.columns
        self.train_time_ = res.wall_time
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        S = self.model_.predict_numpy(np.asarray(X, float))
        return np.clip(S, self.fluid_.s_min, self.fluid_.s_max)

    def profile(self, x, t, theta=()):
        check_is_fitted(self, "model_")
        return infer_profile(self.model_, x, t, theta, self.fluid_)

    def save(self, path):
        check_is_fitted(self, "model_")
        f = self.fluid_
        meta = {
            "fluid": {k: getattr(f, k) for k in ("S_wc", "S_nr", "M", "S_inj", "S_init")},
            "config": _jsonable(self.config_.to_dict()),
        }
        return self.model_.save(path, meta)

    @classmethod
    def load(cls, path):
        model = SurrogateModel.load(path)
        est = cls(fluid=FluidParams(**model.meta["fluid"]))
        est.fluid_ = est.fluid
        est.model_ = model
        cfg = dict(model.meta["config"])
        est.config_ = TrainingConfig(**cfg)
        return est


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# -- velocity subnetwork -----------------------------------------------------


class VelocityNet(BaseEstimator, RegressorMixin):
    """Small network fitted to samples of ``v(x)`` by least squares."""

    def __init__(self, depth=3, width=32, iterations=4000, lr=3e-3, fourier_features=0,
                 fourier_scale=5.0, seed=0, x_range=(0.0, 1.0), dtype="float32"):
        self.depth = depth
        self.width = width
        self.iterations = iterations
        self.lr = lr
        self.fourier_features = fourier_features
        self.fourier_scale = fourier_scale
        self.seed = seed
        self.x_range = x_range
        self.dtype = dtype

    def fit(self, X, y):
        x = np.asarray(X, float).reshape(-1)
        v = np.asarray(y, float).reshape(-1)
        if x.size < 100:
            raise ParameterError("the velocity network needs at least 100 (x, v) pairs")
        self.model_ = SurrogateModel(
            InputNormalizer((float(self.x_range[0]),), (float(self.x_range[1]),)),
            depth=self.depth,
            width=self.width,
            fourier_features=self.fourier_features,
            fourier_scale=self.fourier_scale,
            seed=self.seed,
            dtype=self.dtype,
        )
        # start from the mean so the network only learns the variation
        with torch.no_grad():
            self.model_.biases[-1].fill_(float(v.mean()))
        xt = torch.as_tensor(x[:, None], dtype=self.model_.torch_dtype)
        vt = torch.as_tensor(v, dtype=self.model_.torch_dtype)
        opt = torch.optim.Adam(self.model_.parameters(), lr=self.lr)
        sched = torch.optim.lr_scheduler.LambdaLR(
            opt, lambda k: 0.05 ** (k / max(1, self.iterations))
        )
        hist = []
        for it in range(self.iterations):
            loss = ((self.model_(xt)[:, 0] - vt) ** 2).mean()
            val = float(loss.detach())
            hist.append(val)
            if not np.isfinite(val) or (it > 50 and val > 10.0 * hist[0]):
                raise TrainingError(f"velocity network diverged at iteration {it} (loss {val:.3e})")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            sched.step()
        self.history_ = np.array(hist)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_numpy(np.asarray(X, float).reshape(-1, 1))

    def relative_misfit(self, x, v):
        v = np.asarray(v, float)
        return float(np.linalg.norm(self.predict(x) - v) / np.linalg.norm(v))


def fit_velocity_net(x, v, holdout=None, **kwargs):
    """Fit a :class:`VelocityNet`; returns ``(net, held-out relative L2 misfit)``.

    ``holdout`` is an ``(x, v)`` pair of held-out points; without it the
    misfit is measured on the training data.
    """
    net = VelocityNet(**kwargs).fit(x, v)
    hx, hv = holdout if holdout is not None else (x, v)
    return net, net.relative_misfit(hx, hv)


# -- velocity-correlated shock states -----------------------------------------


class HullCorrelation(BaseEstimator, RegressorMixin):
    """Linear maps ``v -> S_BL`` and ``v -> f(S_BL)``."""

    def __init__(self, S_init=0.0, S_inj=1.0):
        self.S_init = S_init
        self.S_inj = S_inj

    def fit(self, X, y):
        v = np.asarray(X, float).reshape(-1)
        Y = np.asarray(y, float).reshape(len(v), 2)
        if len(v) < 2:
            raise FitError("at least two shock observations are needed")
        A = np.column_stack([v, np.ones_like(v)])
        coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
        self.alpha_s_, self.beta_s_ = float(coef[0, 0]), float(coef[1, 0])
        self.alpha_f_, self.beta_f_ = float(coef[0, 1]), float(coef[1, 1])
        pred = A @ coef
        ss_res = np.sum((Y - pred) ** 2, axis=0)
        ss_tot = np.sum((Y - Y.mean(axis=0)) ** 2, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            r2 = np.where(ss_tot > 0, 1.0 - ss_res / np.where(ss_tot > 0, ss_tot, 1.0), 1.0)
        self.r2_ = tuple(float(r) for r in r2)
        self.v_range_ = (float(v.min()), float(v.max()))
        return self

    def _clip_s(self, s, lib):
        eps = 1e-6
        return lib.clip(s, self.S_init + eps, self.S_inj) if lib is np else s.clamp(self.S_init + eps, self.S_inj)

    def predict(self, X):
        check_is_fitted(self, "alpha_s_")
        v = np.asarray(X, float)
        S = self._clip_s(self.alpha_s_ * v + self.beta_s_, np)
        return np.stack([S, self.alpha_f_ * v + self.beta_f_], axis=-1)

    def predict_torch(self, v):
        check_is_fitted(self, "alpha_s_")
        S = self._clip_s(self.alpha_s_ * v + self.beta_s_, torch)
        return S, self.alpha_f_ * v + self.beta_f_


def detect_shock(S, p: FluidParams, rel_drop=0.1):
    """Locate the smeared shock in a profile and the saturation just behind it.

    Returns ``(index of the steepest descent, upstream saturation)`` or None
    when the profile has no drop larger than half the shock jump.
    """
    S = np.asarray(S, float)
    d = -np.diff(S)
    i = int(np.argmax(d))
    h = welge_hull(p)
    if d[i] <= 0 or S[i] - p.S_init < 0.25 * (h.S_BL - p.S_init):
        return None
    j = i
    while j > 0 and d[j - 1] > rel_drop * d[i]:
        j -= 1
    return i, float(S[j])


def fit_hull_correlation(profiles, velocities, p: FluidParams, min_runs=30):
    """Regress shock state on the local velocity at the front.

    ``profiles`` is a sequence of final-time cell saturations, ``velocities``
    the matching per-cell velocity arrays.
    """
    if len(profiles) != len(velocities):
        raise ParameterError("profiles and velocities must pair up")
    if len(profiles) < min_runs:
        warnings.warn(
            f"only {len(profiles)} realizations for the hull correlation (>= {min_runs} advised)",
            RuntimeWarning,
            stacklevel=2,
        )
    vs, ys = [], []
    for S, v in zip(profiles, velocities):
        hit = detect_shock(S, p)
        if hit is None:
            continue
        i, s_bl = hit
        vv = np.broadcast_to(np.asarray(v, float), np.shape(S))
        vs.append(float(vv[i]))
        ys.append((s_bl, float(fractional_flow(s_bl, p))))
    if not vs:
        raise FitError("no shocks detected in the supplied runs")
    return HullCorrelation(p.S_init, p.S_inj).fit(np.array(vs), np.array(ys))
