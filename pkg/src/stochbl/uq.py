"""Monte Carlo ensembles, quantities of interest and distribution distances."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ParameterError, StochBLError
from .fields import (
    Constant,
    FieldSample,
    eval_field,
    realization_rngs,
)
from .fvm import Grid1D, fvm_solve
from .moc import moc_saturation, tof_saturation
from .physics import FluidParams, welge_hull

__all__ = [
    "DEFAULT_TIMES",
    "DEFAULT_LOCATIONS",
    "EvalGrids",
    "Ensemble",
    "QOIDistribution",
    "ComparisonReport",
    "MOCModel",
    "FVMModel",
    "SurrogateForward",
    "draw_fields",
    "run_ensemble",
    "front_radius",
    "breakthrough_time",
    "half_jump_threshold",
    "envelope",
    "wasserstein1",
    "histogram_pair",
    "kl_divergence",
    "jsd",
    "qoi_distributions",
    "compare_qoi",
    "compare",
]

DEFAULT_TIMES = (0.1, 0.2, 0.3, 0.4, 0.5)
DEFAULT_LOCATIONS = (0.1, 0.3, 0.5, 0.7, 0.9)


@dataclass
class EvalGrids:
    """Where ensembles are evaluated.

    Profiles ``S(x, t)`` are stored at ``profile_times`` on ``x``; time series
    ``S(x0, t)`` at ``series_locations`` on ``series_times``.
    """

    x: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 501))
    profile_times: tuple = DEFAULT_TIMES
    series_locations: tuple = DEFAULT_LOCATIONS
    series_times: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 1001))

    def __post_init__(self):
        self.x = np.asarray(self.x, float)
        self.series_times = np.asarray(self.series_times, float)
        self.profile_times = tuple(float(t) for t in self.profile_times)
        self.series_locations = tuple(float(x) for x in self.series_locations)
        if np.any(np.diff(self.x) <= 0) or np.any(np.diff(self.series_times) <= 0):
            raise ParameterError("evaluation grids must be strictly ascending")


@dataclass
class Ensemble:
    """Per-realization outputs of one forward model on shared grids.

    ``profiles`` is ``(n, n_profile_times, n_x)``; ``series`` is
    ``(n, n_locations, n_series_times)``.
    """

    scenario: str
    model: str
    thetas: list
    x: np.ndarray
    profile_times: tuple
    profiles: np.ndarray
    series_locations: tuple
    series_times: np.ndarray
    series: np.ndarray

    @property
    def n(self):
        return self.profiles.shape[0]


@dataclass
class QOIDistribution:
    kind: str
    anchor: float
    samples: np.ndarray
    censored: int

    @property
    def finite(self):
        return self.samples[np.isfinite(self.samples)]


@dataclass
class ComparisonReport:
    """Per-anchor and averaged Wasserstein distances for each QOI.

    ``qois[kind]`` holds ``anchors``, ``w1``, ``w1_uniform``, ``avg_w1``,
    ``avg_w1_uniform``, ``relative_difference``, ``relative_difference_alt``
    (the ratio under the other baseline support), ``baseline``,
    ``censored_reference``, ``censored_test``, ``skipped`` and optionally
    ``kl``/``jsd``.
    """

    scenario: str
    reference: str
    test: str
    delta: float
    qois: dict

    def relative(self, kind):
        return self.qois[kind]["relative_difference"]

    def to_dict(self):
        return _plain(asdict(self))

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _plain(o):
    if isinstance(o, dict):
        return {k: _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, np.ndarray):
        return _plain(o.tolist())
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if np.isfinite(v) else None
    if isinstance(o, np.integer):
        return int(o)
    return o


# -- forward models ------------------------------------------------------------


class MOCModel:
    """Exact solution: self-similar for uniform fields, time of flight otherwise."""

    tag = "moc"

    def __init__(self, p: FluidParams, n_quad=4096):
        self.p = p
        self.hull = welge_hull(p)
        self.n_quad = n_quad

    def _eval(self, sample: FieldSample, x, t):
        if isinstance(sample.spec, Constant):
            return moc_saturation(self.p, sample.spec.v_d, x, t, self.hull)
        return tof_saturation(
            self.p, lambda s: eval_field(sample.spec, s), x, t, self.hull, self.n_quad
        )

    def run(self, samples, grids: EvalGrids, parameterization=None):
        prof = np.empty((len(samples), len(grids.profile_times), grids.x.size))
        ser = np.empty((len(samples), len(grids.series_locations), grids.series_times.size))
        loc = np.asarray(grids.series_locations)
        for i, smp in enumerate(samples):
            for k, t in enumerate(grids.profile_times):
                prof[i, k] = self._eval(smp, grids.x, t)
            for k, x0 in enumerate(loc):
                ser[i, k] = self._eval(smp, np.full(grids.series_times.shape, x0), grids.series_times)
        return grids.x, prof, ser


class FVMModel:
    """Batched Godunov solves; profiles are taken on the cell centers."""

    tag = "fvm"

    def __init__(self, p: FluidParams, grid: Grid1D = Grid1D(256), dt="fixed", chunk=100):
        self.p = p
        self.grid = grid
        self.dt = dt
        self.chunk = chunk

    def run(self, samples, grids: EvalGrids, parameterization=None):
        g = self.grid
        V = np.stack([np.broadcast_to(np.asarray(s.v_cells, float), (g.n_cells,)) for s in samples])
        t_end = max(max(grids.profile_times), float(grids.series_times[-1]))
        snaps = np.asarray(sorted(set(grids.profile_times)))
        prof, ser = [], []
        for k in range(0, len(V), self.chunk):
            res = fvm_solve(
                self.p,
                V[k : k + self.chunk],
                g,
                t_end,
                dt=self.dt,
                snapshots=snaps,
                probe_x=np.asarray(grids.series_locations),
                probe_times=grids.series_times,
            )
            idx = [int(np.searchsorted(snaps, t)) for t in grids.profile_times]
            prof.append(np.transpose(res.S[idx], (1, 0, 2)))
            ser.append(np.transpose(res.probes, (1, 2, 0)))
        return g.centers, np.concatenate(prof), np.concatenate(ser)


class SurrogateForward:
    """Evaluate a trained surrogate for each realization's parameter vector."""

    tag = "surrogate"

    def __init__(self, model, p: FluidParams):
        self.model = model
        self.p = p

    def _predict(self, x, t, theta_rows):
        u = np.column_stack([x, t, theta_rows]) if theta_rows.size else np.column_stack([x, t])
        return np.clip(self.model.predict_numpy(u), self.p.s_min, self.p.s_max)

    def run(self, samples, grids: EvalGrids, parameterization=None):
        if parameterization is None:
            raise ParameterError("the surrogate forward model needs the parameterization")
        nx, nt = grids.x.size, grids.series_times.size
        locs = np.asarray(grids.series_locations)
        prof = np.empty((len(samples), len(grids.profile_times), nx))
        ser = np.empty((len(samples), len(locs), nt))
        for i, smp in enumerate(samples):
            th_x = np.asarray(parameterization.theta_at(smp, grids.x), float)
            xs = np.tile(grids.x, len(grids.profile_times))
            ts = np.repeat(grids.profile_times, nx)
            prof[i] = self._predict(xs, ts, np.tile(th_x, (len(grids.profile_times), 1))).reshape(-1, nx)
            th_l = np.asarray(parameterization.theta_at(smp, locs), float)
            xl = np.repeat(locs, nt)
            tl = np.tile(grids.series_times, len(locs))
            ser[i] = self._predict(xl, tl, np.repeat(th_l, nt, axis=0)).reshape(len(locs), nt)
        return grids.x, prof, ser


def draw_fields(parameterization, n, seed, grid: Grid1D = Grid1D(256)):
    """One field per realization, each from its own derived stream."""
    return [parameterization.sample(rng, grid) for rng in realization_rngs(seed, n)]


def run_ensemble(model, parameterization, n, grids: EvalGrids, seed, grid: Grid1D = Grid1D(256),
                 scenario="custom", samples=None) -> Ensemble:
    """Draw ``n`` realizations and push them through ``model``.

    Pass ``samples`` to reuse realizations already drawn (so several models
    see identical inputs).
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    samples = draw_fields(parameterization, n, seed, grid) if samples is None else samples[:n]
    for i, smp in enumerate(samples):
        if np.any(np.asarray(smp.v_cells) <= 0):
            raise StochBLError(f"realization {i}: non-positive velocity")
    try:
        x, prof, ser = model.run(samples, grids, parameterization)
    except StochBLError as exc:
        raise type(exc)(f"forward model {model.tag} failed: {exc}") from exc
    bad = ~np.isfinite(prof).reshape(len(samples), -1).all(axis=1)
    if bad.any():
        raise StochBLError(f"realization {int(np.argmax(bad))}: non-finite output")
    return Ensemble(
        scenario,
        model.tag,
        [np.asarray(s.theta) for s in samples],
        np.asarray(x),
        grids.profile_times,
        prof,
        grids.series_locations,
        grids.series_times,
        ser,
    )


# -- quantities of interest ---------------------------------------------------


def half_jump_threshold(p: FluidParams) -> float:
    """Half the shock jump above ``S_init``: robust to smeared fronts."""
    return 0.5 * (welge_hull(p).S_BL - p.S_init)


def front_radius(x, S, p: FluidParams, delta=0.01):
    """Largest position with ``S >= S_init + delta`` (linear interpolation).

    Returns NaN (censored) when nothing exceeds the threshold or the front
    has left the domain.
    """
    x = np.asarray(x, float)
    S = np.asarray(S, float)
    thr = p.S_init + delta
    above = np.nonzero(S >= thr)[0]
    if above.size == 0:
        return np.nan
    i = int(above[-1])
    if i == x.size - 1:
        return np.nan
    s0, s1 = S[i], S[i + 1]
    return float(x[i] + (s0 - thr) / (s0 - s1) * (x[i + 1] - x[i]))


def breakthrough_time(t, series, p: FluidParams, delta=0.01):
    """First time with ``S >= S_init + delta`` (linear interpolation); NaN if never."""
    t = np.asarray(t, float)
    series = np.asarray(series, float)
    thr = p.S_init + delta
    above = np.nonzero(series >= thr)[0]
    if above.size == 0:
        return np.nan
    j = int(above[0])
    if j == 0:
        return float(t[0])
    s0, s1 = series[j - 1], series[j]
    return float(t[j - 1] + (thr - s0) / (s1 - s0) * (t[j] - t[j - 1]))


def qoi_distributions(ens: Ensemble, p: FluidParams, delta):
    """Front-radius and breakthrough-time samples per anchor."""
    out = {"front_radius": [], "breakthrough_time": []}
    for k, t in enumerate(ens.profile_times):
        s = np.array([front_radius(ens.x, ens.profiles[i, k], p, delta) for i in range(ens.n)])
        out["front_radius"].append(QOIDistribution("front_radius", t, s, int(np.isnan(s).sum())))
    for k, x0 in enumerate(ens.series_locations):
        s = np.array([breakthrough_time(ens.series_times, ens.series[i, k], p, delta) for i in range(ens.n)])
        out["breakthrough_time"].append(QOIDistribution("breakthrough_time", x0, s, int(np.isnan(s).sum())))
    return out


def envelope(ens: Ensemble, percentiles=(15, 85)):
    """Pointwise mean and percentile curves of the stored profiles."""
    if ens.n < 2:
        raise ParameterError("an envelope needs at least two realizations")
    out = {"mean": ens.profiles.mean(axis=0)}
    for q in percentiles:
        out[f"P{q:g}"] = np.percentile(ens.profiles, q, axis=0, method="linear")
    return out


# -- distances -----------------------------------------------------------------


def wasserstein1(a, b):
    """W1 between two empirical distributions: integral of |F_a - F_b|."""
    a = np.sort(np.asarray(a, float).ravel())
    b = np.sort(np.asarray(b, float).ravel())
    if a.size == 0 or b.size == 0:
        raise ParameterError("W1 needs non-empty sample sets")
    grid = np.concatenate([a, b])
    grid.sort(kind="mergesort")
    gaps = np.diff(grid)
    Fa = np.searchsorted(a, grid[:-1], side="right") / a.size
    Fb = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(Fa - Fb) * gaps))


def histogram_pair(a, b, bins=30):
    """Normalized histograms of two sample sets on shared bins."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    ha, _ = np.histogram(a, edges)
    hb, _ = np.histogram(b, edges)
    return ha / ha.sum(), hb / hb.sum(), edges


def _normalize(h):
    h = np.asarray(h, float)
    if np.any(h < 0) or h.sum() <= 0:
        raise ParameterError("histograms must be non-negative with positive mass")
    return h / h.sum()


def kl_divergence(p_ref, p):
    """``sum p_ref log(p_ref / p)``; ``inf`` flags test bins empty under reference mass."""
    pr, pt = _normalize(p_ref), _normalize(p)
    if pr.shape != pt.shape:
        raise ParameterError("histograms must share binning")
    m = pr > 0
    if np.any(pt[m] == 0):
        return float("inf")
    return float(np.sum(pr[m] * np.log(pr[m] / pt[m])))


def jsd(a, b):
    pa, pb = _normalize(a), _normalize(b)
    m = 0.5 * (pa + pb)
    return 0.5 * kl_divergence(pa, m) + 0.5 * kl_divergence(pb, m)


# -- comparison ------------------------------------------------------------------


def compare_qoi(ref: Sequence[QOIDistribution], test: Sequence[QOIDistribution], seed=0,
                divergences=False, bins=30, support=None):
    """Pairwise-censored W1 per anchor and the uniform-baseline ratio.

    The baseline is uniform over ``support = (low, high)``; with ``None`` it
    spans the observed reference samples at each anchor.
    """
    anchors, w_t, w_u, c_ref, c_test, skipped, kls, jsds = [], [], [], [], [], [], [], []
    rng = np.random.Generator(np.random.PCG64(seed))
    for r, q in zip(ref, test):
        if r.samples.shape != q.samples.shape:
            raise ParameterError("reference and test ensembles must pair realizations")
        ok = np.isfinite(r.samples) & np.isfinite(q.samples)
        c_ref.append(r.censored)
        c_test.append(q.censored)
        if not ok.any():
            skipped.append(r.anchor)
            continue
        rs, qs = r.samples[ok], q.samples[ok]
        lo, hi = (rs.min(), rs.max()) if support is None else support
        uni = rng.uniform(lo, hi, size=rs.size)
        anchors.append(r.anchor)
        w_t.append(wasserstein1(rs, qs))
        w_u.append(wasserstein1(rs, uni))
        if divergences:
            hr, hq, _ = histogram_pair(rs, qs, bins)
            kls.append(kl_divergence(hr, hq))
            jsds.append(jsd(hr, hq))
    avg_t = float(np.mean(w_t)) if w_t else float("nan")
    avg_u = float(np.mean(w_u)) if w_u else float("nan")
    out = {
        "anchors": anchors,
        "w1": w_t,
        "w1_uniform": w_u,
        "avg_w1": avg_t,
        "avg_w1_uniform": avg_u,
        "relative_difference": avg_t / avg_u if w_u and avg_u > 0 else float("nan"),
        "censored_reference": c_ref,
        "censored_test": c_test,
        "skipped": skipped,
    }
    if divergences:
        out["kl"] = kls
        out["jsd"] = jsds
    return out


def compare(reference: Ensemble, test: Ensemble, p: FluidParams, delta=None, seed=0,
            divergences=True, baseline="domain") -> ComparisonReport:
    """Compare QOI distributions of two ensembles over the same realizations.

    ``delta`` defaults to :func:`half_jump_threshold`.  ``baseline`` picks the
    support of the uniform reference distribution: ``"domain"`` spans the
    whole QOI domain (``x`` grid for front radii, series window for
    breakthrough times), ``"range"`` the observed reference samples.  The
    ratio under the other choice is kept as ``relative_difference_alt``.
    """
    if baseline not in ("domain", "range"):
        raise ParameterError("baseline must be 'domain' or 'range'")
    if reference.n != test.n:
        raise ParameterError("ensembles must have the same number of realizations")
    if tuple(reference.profile_times) != tuple(test.profile_times) or tuple(
        reference.series_locations
    ) != tuple(test.series_locations):
        raise ParameterError("ensembles must share anchors")
    delta = half_jump_threshold(p) if delta is None else float(delta)
    qr = qoi_distributions(reference, p, delta)
    qt = qoi_distributions(test, p, delta)
    domains = {
        "front_radius": (float(reference.x[0]), float(reference.x[-1])),
        "breakthrough_time": (float(reference.series_times[0]), float(reference.series_times[-1])),
    }
    qois = {}
    for kind in ("front_radius", "breakthrough_time"):
        main, alt = (domains[kind], None) if baseline == "domain" else (None, domains[kind])
        out = compare_qoi(qr[kind], qt[kind], seed=seed, divergences=divergences, support=main)
        other = compare_qoi(qr[kind], qt[kind], seed=seed, support=alt)
        out["baseline"] = baseline
        out["relative_difference_alt"] = other["relative_difference"]
        qois[kind] = out
    return ComparisonReport(reference.scenario, reference.model, test.model, delta, qois)
