"""Scenario pipeline: sampling, reference ensemble, surrogate training and inference,
comparison and moments, with CSV artifacts and a digest manifest."""

from __future__ import annotations

import hashlib
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import ScenarioConfig, config_hash, to_document
from .exceptions import StochBLError
from .fields import eval_field, realization_rngs
from .fvm import Grid1D, fvm_solve
from .moments import error_metrics, moments_fd_solve, moments_mc, moments_pinn_train
from .pinn.estimators import ParameterizedPINN, fit_hull_correlation
from .pinn.network import SurrogateModel
from .uq import (
    FVMModel,
    MOCModel,
    SurrogateForward,
    compare,
    half_jump_threshold,
    qoi_distributions,
    run_ensemble,
)

__all__ = [
    "RunManifest",
    "PhaseError",
    "draw_scenario_fields",
    "reference_model",
    "train_surrogate",
    "run_scenario",
    "bench",
    "write_profiles_csv",
    "write_qoi_csv",
    "sample_velocity_table",
    "write_history",
    "write_moments_csv",
    "sha256_file",
]

PHASES = ("sampling", "solving", "training", "inference", "metrics", "moments")


@dataclass
class RunManifest:
    """What a run produced and how long each phase took.

    ``artifacts`` maps file names (relative to the output directory) to
    sha256 digests.  The config hash and seed reproduce the run.
    """

    scenario: str
    config_hash: str
    seed: int
    version: str = __version__
    wall_times: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    status: str = "running"
    failed_phase: str | None = None
    error: str | None = None

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": self.version,
            "wall_times": dict(self.wall_times),
            "artifacts": dict(sorted(self.artifacts.items())),
            "status": self.status,
            "failed_phase": self.failed_phase,
            "error": self.error,
        }

    def write(self, out: Path):
        path = Path(out) / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


class PhaseError(StochBLError):
    """A pipeline phase failed; carries the phase name and the partial manifest."""

    def __init__(self, phase, cause, manifest):
        super().__init__(f"phase '{phase}' failed: {cause}")
        self.phase = phase
        self.cause = cause
        self.manifest = manifest


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Recorder:
    def __init__(self, out: Path | None, manifest: RunManifest):
        self.out = out
        self.manifest = manifest

    def path(self, name):
        return None if self.out is None else self.out / name

    def add(self, name):
        if self.out is not None:
            self.manifest.artifacts[name] = sha256_file(self.out / name)

    @contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        try:
            yield
        except Exception as exc:
            self.manifest.wall_times[name] = time.perf_counter() - t0
            self.manifest.status = "failed"
            self.manifest.failed_phase = name
            self.manifest.error = f"{type(exc).__name__}: {exc}"
            if self.out is not None:
                self.manifest.write(self.out)
            raise PhaseError(name, exc, self.manifest) from exc
        self.manifest.wall_times[name] = self.manifest.wall_times.get(name, 0.0) + time.perf_counter() - t0


# -- CSV writers -------------------------------------------------------------------


def write_profiles_csv(path, ens):
    """Columns ``realization, t, x, S``; one row per stored profile value."""
    n, nt, nx = ens.profiles.shape
    r = np.repeat(np.arange(n), nt * nx)
    t = np.tile(np.repeat(np.asarray(ens.profile_times, float), nx), n)
    x = np.tile(ens.x, n * nt)
    data = np.column_stack([r, t, x, ens.profiles.reshape(-1)])
    np.savetxt(path, data, delimiter=",", header="realization,t,x,S", comments="",
               fmt=["%d", "%.10g", "%.10g", "%.10g"])


def write_qoi_csv(path, dists):
    """Columns ``realization, anchor, value, censored``; censored rows have empty value."""
    with open(path, "w") as fh:
        fh.write("realization,anchor,value,censored\n")
        for d in dists:
            for i, v in enumerate(d.samples):
                if np.isfinite(v):
                    fh.write(f"{i},{d.anchor:.10g},{v:.10g},0\n")
                else:
                    fh.write(f"{i},{d.anchor:.10g},,1\n")


def write_history(path, history, columns):
    np.savetxt(path, np.column_stack([np.arange(len(history)), history]), delimiter=",",
               header=",".join(("iteration",) + tuple(columns)), comments="",
               fmt=["%d"] + ["%.8e"] * len(columns))


def write_moments_csv(path, sols):
    with open(path, "w") as fh:
        fh.write("method,t,x,mu,sigma\n")
        for sol in sols:
            for k, t in enumerate(sol.t):
                for x, m, s in zip(sol.x, sol.mu[k], sol.sigma[k]):
                    fh.write(f"{sol.provenance},{t:.10g},{x:.10g},{m:.10g},{s:.10g}\n")


PLOT_SCRIPT = '''"""Plot the CSV artifacts of this run (needs matplotlib and pandas)."""
import json
import sys
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent

for prof in sorted(out.glob("profiles_*.csv")):
    df = pd.read_csv(prof)
    fig, ax = plt.subplots()
    for t, g in df.groupby("t"):
        q = g.groupby("x")["S"]
        mean, lo, hi = q.mean(), q.quantile(0.15), q.quantile(0.85)
        ax.plot(mean.index, mean.values, label=f"t={t:g}")
        ax.fill_between(mean.index, lo.values, hi.values, alpha=0.2)
    ax.set_xlabel("x")
    ax.set_ylabel("S")
    ax.legend()
    fig.savefig(prof.with_suffix(".png"), dpi=120)

for qoi in sorted(out.glob("qoi_*.csv")):
    df = pd.read_csv(qoi).dropna(subset=["value"])
    fig, ax = plt.subplots()
    for a, g in df.groupby("anchor"):
        ax.hist(g["value"], bins=30, alpha=0.5, density=True, label=f"{a:g}")
    ax.set_xlabel(qoi.stem)
    ax.legend()
    fig.savefig(qoi.with_suffix(".png"), dpi=120)

hist = out / "loss_history.csv"
if hist.exists():
    df = pd.read_csv(hist)
    fig, ax = plt.subplots()
    for c in df.columns[1:]:
        ax.semilogy(df["iteration"], df[c], label=c)
    ax.legend()
    fig.savefig(out / "loss_history.png", dpi=120)

mom = out / "moments.csv"
if mom.exists():
    df = pd.read_csv(mom)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for (meth, t), g in df.groupby(["method", "t"]):
        axes[0].plot(g["x"], g["mu"], label=f"{meth} t={t:g}")
        axes[1].plot(g["x"], g["sigma"], label=f"{meth} t={t:g}")
    axes[0].set_ylabel("mean")
    axes[1].set_ylabel("std")
    axes[0].legend(fontsize=6)
    fig.savefig(out / "moments.png", dpi=120)

report = out / "report.json"
if report.exists():
    print(json.dumps(json.loads(report.read_text()).get("summary", {}), indent=2))
'''


# -- building blocks -------------------------------------------------------------


def draw_scenario_fields(cfg: ScenarioConfig, n=None, velocity=None):
    """Realizations used by every forward model of the run (shared inputs)."""
    par = velocity if velocity is not None else (cfg.inference_velocity or cfg.velocity)
    n = cfg.samples if n is None else n
    g = Grid1D(cfg.grid_cells)
    return [par.sample(rng, g) for rng in realization_rngs(cfg.seed, n)]


def reference_model(cfg: ScenarioConfig):
    if cfg.reference == "fvm":
        return FVMModel(cfg.fluid, Grid1D(cfg.grid_cells))
    return MOCModel(cfg.fluid)


def _fit_correlation(cfg: ScenarioConfig, n_runs=50, t_end=0.5):
    """Shock states from finite-volume runs of the training parameterization."""
    g = Grid1D(cfg.grid_cells)
    rngs = realization_rngs(np.random.SeedSequence([cfg.seed, 1]), n_runs)
    samples = [cfg.velocity.sample(rng, g) for rng in rngs]
    V = np.stack([np.broadcast_to(np.asarray(s.v_cells, float), (g.n_cells,)) for s in samples])
    res = fvm_solve(cfg.fluid, V, g, t_end, snapshots=[t_end])
    return fit_hull_correlation(list(res.S[-1]), list(V), cfg.fluid)


def train_surrogate(cfg: ScenarioConfig) -> ParameterizedPINN:
    if cfg.training is None:
        raise StochBLError("the scenario has no training section")
    hc = _fit_correlation(cfg) if cfg.training.hull_mode == "correlated" else None
    return ParameterizedPINN(cfg.fluid, cfg.velocity, cfg.training, hull_correlation=hc).fit()


def _qoi_summary(dists):
    out = {}
    for kind, ds in dists.items():
        out[kind] = [
            {
                "anchor": d.anchor,
                "mean": float(np.mean(d.finite)) if d.finite.size else None,
                "std": float(np.std(d.finite)) if d.finite.size else None,
                "censored": d.censored,
            }
            for d in ds
        ]
    return out


def _write_ensemble(rec, ens, p, delta, tag):
    dists = qoi_distributions(ens, p, delta)
    if rec.out is not None:
        write_profiles_csv(rec.path(f"profiles_{tag}.csv"), ens)
        rec.add(f"profiles_{tag}.csv")
        for kind, ds in dists.items():
            write_qoi_csv(rec.path(f"qoi_{tag}_{kind}.csv"), ds)
            rec.add(f"qoi_{tag}_{kind}.csv")
    return dists


# -- pipeline ------------------------------------------------------------------------


def run_scenario(cfg: ScenarioConfig, out=None, model: SurrogateModel | None = None):
    """Run the configured pipeline and write its artifacts to ``out``.

    Phases: sample fields, reference ensemble, train (when a training section
    exists and no ``model`` is given), surrogate ensemble, compare, moments
    (when configured).  Returns ``(manifest, results)``; on failure a
    :class:`PhaseError` carries the partial manifest, which is also written.
    """
    out = Path(out if out is not None else (cfg.out or f"runs/{cfg.scenario}")) if out is not False else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.scenario, config_hash(cfg), cfg.seed)
    rec = _Recorder(out, manifest)
    results = {}
    p = cfg.fluid
    grids = cfg.eval.grids()
    delta = cfg.eval.delta if cfg.eval.delta is not None else half_jump_threshold(p)
    if out is not None:
        (out / "config.yaml").write_text(yaml.safe_dump(to_document(cfg), sort_keys=True))
        rec.add("config.yaml")
        (out / "plot_results.py").write_text(PLOT_SCRIPT)
        rec.add("plot_results.py")

    has_ensemble = cfg.samples > 0
    report = {"scenario": cfg.scenario, "delta": delta, "summary": {}}
    if has_ensemble:
        with rec.phase("sampling"):
            samples = draw_scenario_fields(cfg)
            results["samples"] = samples
        with rec.phase("solving"):
            ref = run_ensemble(reference_model(cfg), cfg.inference_velocity or cfg.velocity, len(samples),
                               grids, cfg.seed, scenario=cfg.scenario, samples=samples)
            results["reference"] = ref
            ref_d = _write_ensemble(rec, ref, p, delta, "reference")
            report["reference"] = {"model": ref.model, "qoi": _qoi_summary(ref_d)}

    surrogate = model
    if cfg.training is not None and surrogate is None:
        with rec.phase("training"):
            est = train_surrogate(cfg)
            surrogate = est.model_
            results["estimator"] = est
            if out is not None:
                est.save(out / "model.npz")
                rec.add("model.npz")
                write_history(out / "loss_history.csv", est.history_, est.history_columns_)
                rec.add("loss_history.csv")

    if surrogate is not None and has_ensemble:
        with rec.phase("inference"):
            fwd = SurrogateForward(surrogate, p)
            sur = run_ensemble(fwd, cfg.inference_velocity or cfg.velocity, len(samples), grids, cfg.seed,
                               scenario=cfg.scenario, samples=samples)
            results["surrogate"] = sur
            _write_ensemble(rec, sur, p, delta, "surrogate")
        with rec.phase("metrics"):
            cmp = compare(ref, sur, p, delta=delta, seed=cfg.seed, baseline=cfg.eval.baseline)
            results["comparison"] = cmp
            report["comparison"] = cmp.to_dict()
            report["summary"] = {
                kind: {
                    "avg_w1": cmp.qois[kind]["avg_w1"],
                    "avg_w1_uniform": cmp.qois[kind]["avg_w1_uniform"],
                    "relative_difference": cmp.qois[kind]["relative_difference"],
                    "relative_difference_alt": cmp.qois[kind]["relative_difference_alt"],
                }
                for kind in cmp.qois
            }

    if cfg.moments is not None:
        with rec.phase("moments"):
            report["moments"] = _run_moments(cfg, rec, results)

    if out is not None:
        (out / "report.json").write_text(json.dumps(_clean(report), indent=2, sort_keys=True) + "\n")
        rec.add("report.json")
    manifest.status = "ok"
    if out is not None:
        manifest.write(out)
    return manifest, results


def _run_moments(cfg, rec, results):
    mc_cfg, p = cfg.moments, cfg.fluid
    fd = moments_fd_solve(mc_cfg, p)
    mc = moments_mc(mc_cfg, p, n=cfg.moments_samples, seed=cfg.seed)
    sols = [fd, mc]
    summary = {"fd_mass_error": fd.mass_error, "fd_dt": fd.dt}
    if cfg.moments_training is not None:
        pinn = moments_pinn_train(mc_cfg, p, cfg.moments_training)
        sols.append(pinn)
        if rec.out is not None:
            write_history(rec.path("moments_loss_history.csv"), pinn.extra["history"], pinn.extra["columns"])
            rec.add("moments_loss_history.csv")
    for sol in [s for s in sols if s is not mc]:
        per_t = {}
        for k, t in enumerate(mc.t):
            mu, sg = sol.at(t)
            _, r_mu = error_metrics(mu, mc.mu[k])
            e_sig, r_sig = error_metrics(sg, mc.sigma[k])
            per_t[f"{t:g}"] = {
                "r_mean": r_mu,
                "r_std": r_sig,
                "max_abs_mean_error": float(np.max(np.abs(mu - mc.mu[k]))),
                "max_abs_std_error": float(np.max(e_sig)),
            }
        summary[sol.provenance] = per_t
    results["moments"] = {s.provenance: s for s in sols}
    if rec.out is not None:
        write_moments_csv(rec.path("moments.csv"), sols)
        rec.add("moments.csv")
    return summary


def _clean(o):
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)):
        v = float(o)
        return v if np.isfinite(v) else None
    if isinstance(o, np.integer):
        return int(o)
    return o


# -- benchmark ------------------------------------------------------------------------


def bench(cfg: ScenarioConfig, n=None, model: SurrogateModel | None = None, mcs_dt="fixed"):
    """Wall times of the Monte Carlo path and the train-then-infer path.

    The Monte Carlo path samples fields and runs the finite-volume solver on
    each; the surrogate path trains (unless ``model`` is given, in which case
    training time is reported as zero) and evaluates the same realizations.
    Times are reported, never asserted.
    """
    n = cfg.samples if n is None else n
    grids = cfg.eval.grids()
    par = cfg.inference_velocity or cfg.velocity
    t0 = time.perf_counter()
    samples = draw_scenario_fields(cfg, n)
    t_sample = time.perf_counter() - t0
    t0 = time.perf_counter()
    run_ensemble(FVMModel(cfg.fluid, Grid1D(cfg.grid_cells), dt=mcs_dt), par, n, grids, cfg.seed,
                 scenario=cfg.scenario, samples=samples)
    t_solve = time.perf_counter() - t0
    report = {
        "scenario": cfg.scenario,
        "samples": n,
        "mcs": {"sampling": t_sample, "solving": t_solve, "total": t_sample + t_solve},
    }
    if cfg.training is not None or model is not None:
        t_train = 0.0
        if model is None:
            t0 = time.perf_counter()
            model = train_surrogate(cfg).model_
            t_train = time.perf_counter() - t0
        t0 = time.perf_counter()
        run_ensemble(SurrogateForward(model, cfg.fluid), par, n, grids, cfg.seed, scenario=cfg.scenario,
                     samples=samples)
        t_inf = time.perf_counter() - t0
        report["surrogate"] = {
            "training": t_train,
            "inference": t_inf,
            "inference_per_1000": t_inf * 1000.0 / n,
            "total": t_train + t_inf,
        }
    return report


def sample_velocity_table(samples, x):
    """``(realization, x, v)`` rows for a set of drawn fields."""
    rows = [np.column_stack([np.full(x.size, i), x, eval_field(s.spec, x)]) for i, s in enumerate(samples)]
    return np.concatenate(rows) if rows else np.empty((0, 3))
