"""Physics losses, training loop and inference for the parameterized surrogate."""

from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from ..exceptions import ParameterError, TrainingError
from ..moc import SaturationProfile
from ..physics import FluidParams, HullModel, welge_hull
from .network import InputNormalizer, SurrogateModel

__all__ = [
    "FourierConfig",
    "TrainingConfig",
    "SampleBatch",
    "FieldContext",
    "LossTerms",
    "TrainResult",
    "draw_samples",
    "flux_torch",
    "flux_derivative_torch",
    "hull_derivative_torch",
    "build_model",
    "loss_terms",
    "total_loss",
    "train",
    "infer_profile",
]


@dataclass
class FourierConfig:
    enabled: bool = False
    n_features: int = 64
    scale: float = 5.0
    trainable: bool = True


@dataclass
class TrainingConfig:
    """Network, sampling, optimizer and strategy settings.

    ``multipliers`` weight (initial, boundary, residual) losses.  Strategy
    flags: ``diffusion_eps`` adds an artificial viscosity term,
    ``loss_weighting`` damps residuals at steep gradients, ``hull_mode`` picks
    the global entropy hull or the velocity-correlated one,
    ``continuity_planes`` adds flux-continuity constraints on interior
    planes, ``velocity_net`` learns v(x) with a jointly trained subnetwork.
    """

    depth: int = 8
    width: int = 20
    activation: str = "tanh"
    n_samples: int = 5000
    multipliers: tuple = (1.0, 1.0, 1.0)
    lr: float = 1e-3
    lr_final_factor: float = 1.0
    iterations: int = 20_000
    seed: int = 0
    x_range: tuple = (0.0, 1.0)
    t_range: tuple = (0.0, 1.0)
    theta_ranges: tuple = ()
    diffusion_eps: float = 0.0
    loss_weighting: bool = False
    hull_mode: str = "global"
    continuity_planes: int = 0
    velocity_net: bool = False
    fourier: FourierConfig = field(default_factory=FourierConfig)
    resample_every: int = 0
    positive_theta: bool = True
    dtype: str = "float32"
    log_every: int = 0

    def __post_init__(self):
        if isinstance(self.fourier, dict):
            self.fourier = FourierConfig(**self.fourier)
        self.multipliers = tuple(float(m) for m in self.multipliers)
        self.x_range = tuple(float(v) for v in self.x_range)
        self.t_range = tuple(float(v) for v in self.t_range)
        self.theta_ranges = tuple(tuple(float(v) for v in r) for r in self.theta_ranges)
        errors = self.problems()
        if errors:
            raise ParameterError("invalid TrainingConfig: " + "; ".join(errors))

    def problems(self):
        out = []
        if self.n_samples <= 0:
            out.append("n_samples must be > 0")
        if self.depth < 1 or self.width < 1:
            out.append("depth and width must be >= 1")
        if len(self.multipliers) != 3 or any(m < 0 for m in self.multipliers):
            out.append("multipliers must be three non-negative numbers")
        if not self.lr > 0:
            out.append("lr must be > 0")
        if not 0 < self.lr_final_factor <= 1:
            out.append("lr_final_factor must lie in (0, 1]")
        if self.iterations < 0:
            out.append("iterations must be >= 0")
        for name, r in [("x_range", self.x_range), ("t_range", self.t_range)] + [
            (f"theta_ranges[{i}]", r) for i, r in enumerate(self.theta_ranges)
        ]:
            if len(r) != 2 or not r[0] < r[1]:
                out.append(f"{name} must be a non-degenerate (low, high) pair")
        if self.diffusion_eps < 0:
            out.append("diffusion_eps must be >= 0")
        if self.hull_mode not in ("global", "correlated"):
            out.append("hull_mode must be 'global' or 'correlated'")
        if self.continuity_planes < 0:
            out.append("continuity_planes must be >= 0")
        if self.dtype not in ("float32", "float64"):
            out.append("dtype must be float32 or float64")
        return out

    @property
    def input_ranges(self):
        return (self.x_range, self.t_range) + tuple(self.theta_ranges)

    def to_dict(self):
        return asdict(self)


@dataclass
class SampleBatch:
    """Training points; each array is ``(n, 2 + P)`` in physical units."""

    interior: np.ndarray
    initial: np.ndarray
    boundary: np.ndarray

    def __post_init__(self):
        dims = {a.shape[1] for a in (self.interior, self.initial, self.boundary)}
        if len(dims) != 1:
            raise ParameterError("all sample sets must share the input dimension")
        if np.any(self.initial[:, 1] != 0.0):
            raise ParameterError("initial-condition points must have t = 0")
        if np.any(self.boundary[:, 0] != 0.0):
            raise ParameterError("boundary points must have x = 0")

    def check_ranges(self, ranges):
        for arr in (self.interior, self.initial, self.boundary):
            for j, (lo, hi) in enumerate(ranges):
                if np.any(arr[:, j] < lo) or np.any(arr[:, j] > hi):
                    return False
        return True


def draw_samples(cfg: TrainingConfig, rng, n=None, accept=None, max_rounds=10_000) -> SampleBatch:
    """Uniform samples over the training ranges (one set per loss term).

    ``accept`` maps an ``(m, P)`` parameter array to a boolean mask; rejected
    parameter rows are redrawn, so training covers the same (for example
    positive-field) support as the ensembles.  Without rejections the draws
    are identical to ``accept=None``.
    """
    n = cfg.n_samples if n is None else n
    ranges = cfg.input_ranges
    lo = np.array([r[0] for r in ranges[2:]], float)
    hi = np.array([r[1] for r in ranges[2:]], float)

    def block():
        cols = [a + (b - a) * rng.random(n) for a, b in ranges]
        out = np.stack(cols, axis=1)
        if accept is None or not cfg.theta_ranges:
            return out
        bad = ~np.asarray(accept(out[:, 2:]), bool)
        for _ in range(max_rounds):
            if not bad.any():
                return out
            m = int(bad.sum())
            out[bad, 2:] = lo + (hi - lo) * rng.random((m, lo.size))
            bad[bad] = ~np.asarray(accept(out[bad, 2:]), bool)
        raise ParameterError(f"no accepted parameter rows after {max_rounds} rounds of redrawing")

    interior = block()
    initial = block()
    initial[:, 1] = 0.0
    boundary = block()
    boundary[:, 0] = cfg.x_range[0]
    return SampleBatch(interior, initial, boundary)


# -- flux in torch -------------------------------------------------------------


def _parts_torch(S, p):
    S = S.clamp(p.s_min, p.s_max)
    a = S - p.S_wc
    b = 1.0 - S - p.S_nr
    return a, b, a * a + b * b / p.M


def flux_torch(S, p: FluidParams):
    a, _, den = _parts_torch(S, p)
    return a * a / den


def flux_derivative_torch(S, p: FluidParams):
    a, b, den = _parts_torch(S, p)
    c = 1.0 - p.S_wc - p.S_nr
    return 2.0 * c * a * b / (p.M * den * den)


def hull_derivative_torch(S, p: FluidParams, hull: HullModel, S_BL=None, slope=None):
    """Entropy-hull derivative; ``S_BL``/``slope`` may be per-sample tensors."""
    S = S.clamp(hull.S_init, hull.S_inj)
    S_BL = hull.S_BL if S_BL is None else S_BL
    slope = hull.sigma if slope is None else slope
    raw = flux_derivative_torch(S, p)
    chord = torch.as_tensor(slope, dtype=S.dtype).expand_as(S) if not torch.is_tensor(slope) else slope
    return torch.where(S < S_BL, chord, raw)


# -- losses --------------------------------------------------------------------


@dataclass
class FieldContext:
    """What the loss needs to know about the velocity field.

    ``velocity(x, theta)`` returns the Darcy velocity as a torch tensor;
    ``theta`` is the ``(n, P)`` slice of the inputs.  ``velocity_model`` is an
    optional jointly trained subnetwork replacing ``velocity``, fitted to
    ``velocity_data = (x, v)``.  ``hull_correlation`` provides per-velocity
    shock states in correlated-hull mode.  ``theta_accept`` is passed to
    :func:`draw_samples` to restrict training parameters.
    """

    velocity: Optional[Callable] = None
    velocity_model: Optional[SurrogateModel] = None
    velocity_data: Optional[tuple] = None
    hull: Optional[HullModel] = None
    hull_correlation: object = None
    theta_accept: Optional[Callable] = None

    def velocity_at(self, x, theta):
        if self.velocity_model is not None:
            return self.velocity_model(x[:, None])[:, 0]
        if self.velocity is None:
            raise ParameterError("field context has no velocity")
        return self.velocity(x, theta)


@dataclass
class LossTerms:
    """Summed (not averaged) squared losses and their sample counts."""

    ic: torch.Tensor
    bc: torch.Tensor
    residual: torch.Tensor
    aux: dict
    counts: dict


def _check_finite(name, values, inputs):
    bad = ~torch.isfinite(values)
    if bool(bad.any()):
        idx = int(torch.nonzero(bad.reshape(bad.shape[0], -1).any(dim=1))[0])
        sample = inputs[idx].detach().double().numpy().tolist()
        raise TrainingError(f"non-finite {name} loss at sample {idx} with input {sample}")


def _to_tensor(a, model):
    return a if torch.is_tensor(a) else torch.as_tensor(np.asarray(a), dtype=model.torch_dtype)


def loss_terms(model: SurrogateModel, batch: SampleBatch, p: FluidParams, cfg: TrainingConfig, ctx: FieldContext) -> LossTerms:
    interior = _to_tensor(batch.interior, model)
    initial = _to_tensor(batch.initial, model)
    boundary = _to_tensor(batch.boundary, model)
    hull = ctx.hull if ctx.hull is not None else welge_hull(p)
    n_int = interior.shape[0]

    # collocation and initial points share one derivative pass
    stacked = torch.cat([interior, initial], dim=0)
    jet = model.jet(stacked, derivatives=True, second=cfg.diffusion_eps > 0)
    S = jet.value[:n_int, 0]
    Sx = jet.dx[:n_int, 0]
    St = jet.dt[:n_int, 0]
    S0 = jet.value[n_int:, 0]
    S0t = jet.dt[n_int:, 0]

    x, theta = interior[:, 0], interior[:, 2:]
    v = ctx.velocity_at(x, theta)
    if cfg.hull_mode == "correlated":
        if ctx.hull_correlation is None:
            raise ParameterError("correlated hull mode needs a fitted hull correlation")
        S_BL, f_BL = ctx.hull_correlation.predict_torch(v)
        slope = (f_BL - hull.f_init) / (S_BL - hull.S_init)
        dF = hull_derivative_torch(S, p, hull, S_BL, slope)
    else:
        dF = hull_derivative_torch(S, p, hull)
    r = St + dF * v * Sx
    if cfg.diffusion_eps > 0:
        r = r - cfg.diffusion_eps * jet.dxx[:n_int, 0]
    r2 = r * r
    if cfg.loss_weighting:
        r2 = r2 / (Sx * Sx + St * St + 1.0)
    _check_finite("residual", r2, interior)

    ic_terms = (S0 - p.S_init) ** 2 + S0t**2
    _check_finite("initial-condition", ic_terms, initial)
    Sb = model(boundary)[:, 0]
    bc_terms = (Sb - p.S_inj) ** 2
    _check_finite("boundary", bc_terms, boundary)

    aux, counts = {}, {"ic": initial.shape[0], "bc": boundary.shape[0], "residual": n_int}
    if cfg.continuity_planes > 0:
        planes = cfg.x_range[0] + (cfg.x_range[1] - cfg.x_range[0]) * np.arange(
            1, cfg.continuity_planes + 1
        ) / (cfg.continuity_planes + 1)
        per = max(1, n_int // cfg.continuity_planes)
        pts = []
        for xp in planes:
            blk = interior[:per].clone()
            blk[:, 0] = float(xp)
            pts.append(blk)
        pts = torch.cat(pts, dim=0)
        pj = model.jet(pts, derivatives=True)
        Sp, Spx = pj.value[:, 0], pj.dx[:, 0]
        # d f / dx  -  (v_sh / v) dS/dx  with  v_sh = v * hull'(S)
        cont = (flux_derivative_torch(Sp, p) - hull_derivative_torch(Sp, p, hull)) * Spx
        aux["continuity"] = (cont * cont).sum()
        counts["continuity"] = pts.shape[0]
        _check_finite("continuity", cont, pts)
    if ctx.velocity_model is not None and ctx.velocity_data is not None:
        xd, vd = (_to_tensor(a, model) for a in ctx.velocity_data)
        misfit = ctx.velocity_model(xd[:, None])[:, 0] - vd
        aux["velocity_fit"] = (misfit * misfit).sum()
        counts["velocity_fit"] = xd.shape[0]
    return LossTerms(ic_terms.sum(), bc_terms.sum(), r2.sum(), aux, counts)


def total_loss(terms: LossTerms, cfg: TrainingConfig):
    """Multiplier-weighted sum of per-sample mean losses."""
    m_ic, m_bc, m_r = cfg.multipliers
    tot = (
        m_ic * terms.ic / terms.counts["ic"]
        + m_bc * terms.bc / terms.counts["bc"]
        + m_r * terms.residual / terms.counts["residual"]
    )
    for k, v in terms.aux.items():
        tot = tot + v / terms.counts[k]
    return tot


# -- training ------------------------------------------------------------------


@dataclass
class TrainResult:
    model: SurrogateModel
    history: np.ndarray
    columns: tuple
    wall_time: float
    velocity_model: Optional[SurrogateModel] = None


def build_model(cfg: TrainingConfig, n_outputs=1, ranges=None) -> SurrogateModel:
    ranges = cfg.input_ranges if ranges is None else ranges
    norm = InputNormalizer(tuple(r[0] for r in ranges), tuple(r[1] for r in ranges))
    fc = cfg.fourier
    return SurrogateModel(
        norm,
        depth=cfg.depth,
        width=cfg.width,
        n_outputs=n_outputs,
        activation=cfg.activation,
        fourier_features=fc.n_features if fc.enabled else 0,
        fourier_scale=fc.scale,
        train_fourier=fc.trainable,
        seed=cfg.seed,
        dtype=cfg.dtype,
    )


def _num(t):
    return float(t.detach())


def _snapshot(params):
    return [q.detach().clone() for q in params]


def train(
    cfg: TrainingConfig,
    p: FluidParams,
    ctx: FieldContext,
    model: SurrogateModel | None = None,
    batch: SampleBatch | None = None,
    callback=None,
) -> TrainResult:
    """Adam on the full fixed sample set; returns the model and per-iteration losses.

    History columns are ``total, ic, bc, residual`` followed by any auxiliary
    terms, all as per-sample means.
    """
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    model = build_model(cfg) if model is None else model
    if batch is None:
        batch = draw_samples(cfg, rng, accept=ctx.theta_accept)
    params = [q for q in model.parameters() if q.requires_grad]
    if ctx.velocity_model is not None:
        params += [q for q in ctx.velocity_model.parameters() if q.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr)
    n_it = cfg.iterations
    if cfg.lr_final_factor < 1.0 and n_it > 0:
        # hold the step for the first quarter, then decay geometrically
        start = n_it // 4
        span = max(1, n_it - start)
        ff = cfg.lr_final_factor
        sched = torch.optim.lr_scheduler.LambdaLR(
            opt, lambda k: ff ** (min(span, max(0, k - start)) / span)
        )
    else:
        sched = None

    rows = []
    aux_keys = None
    last_good = _snapshot(params)
    t0 = time.perf_counter()
    for it in range(n_it):
        if cfg.resample_every and it and it % cfg.resample_every == 0:
            batch = draw_samples(cfg, rng, accept=ctx.theta_accept)
        try:
            terms = loss_terms(model, batch, p, cfg, ctx)
        except TrainingError as exc:
            exc.state = last_good
            raise
        loss = total_loss(terms, cfg)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite total loss at iteration {it}", state=last_good)
        if aux_keys is None:
            aux_keys = sorted(terms.aux)
        c = terms.counts
        rows.append(
            [_num(loss), _num(terms.ic) / c["ic"], _num(terms.bc) / c["bc"], _num(terms.residual) / c["residual"]]
            + [_num(terms.aux[k]) / c[k] for k in aux_keys]
        )
        if it % 500 == 0:
            last_good = _snapshot(params)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if sched is not None:
            sched.step()
        if cfg.log_every and it % cfg.log_every == 0:
            print(f"iter {it:6d}  loss {rows[-1][0]:.4e}", flush=True)
        if callback is not None:
            callback(it, model)
    cols = ("total", "ic", "bc", "residual") + tuple(aux_keys or ())
    history = np.array(rows, dtype=float).reshape(len(rows), len(cols))
    return TrainResult(model, history, cols, time.perf_counter() - t0, ctx.velocity_model)


def infer_profile(model: SurrogateModel, x, t, theta=(), p: FluidParams | None = None) -> SaturationProfile:
    """Clamped surrogate saturation along ``x`` at time ``t`` for one parameter vector."""
    x = np.asarray(x, dtype=float)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    lo, hi = np.asarray(model.normalizer.low), np.asarray(model.normalizer.high)
    probe = np.concatenate([[t], theta])
    if np.any(probe < lo[1:] - 1e-12) or np.any(probe > hi[1:] + 1e-12):
        warnings.warn("inference outside the training support", RuntimeWarning, stacklevel=2)
    u = np.column_stack([x, np.full_like(x, t)] + [np.full_like(x, th) for th in theta])
    S = model.predict_numpy(u)
    lo_s, hi_s = (0.0, 1.0) if p is None else (p.s_min, p.s_max)
    return SaturationProfile(x, np.clip(S, lo_s, hi_s), float(t))
