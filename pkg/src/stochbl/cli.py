"""Command-line entry point: ``stochbl <command> [--preset NAME | --config PATH] ...``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import PRESETS, ScenarioConfig, config_hash, parse_config, preset_names, to_document
from .exceptions import ConfigurationError, ParameterError, StochBLError, ValidationError
from .fields import Constant, eval_field
from .fvm import Grid1D, fvm_solve
from .moc import moc_saturation, tof_saturation
from .moments import moments_fd_solve, moments_mc, moments_pinn_train
from .physics import welge_hull
from .pinn.estimators import ParameterizedPINN
from .runner import (
    PhaseError,
    RunManifest,
    bench,
    draw_scenario_fields,
    run_scenario,
    sample_velocity_table,
    sha256_file,
    train_surrogate,
    write_history,
    write_moments_csv,
    write_profiles_csv,
    write_qoi_csv,
)
from .uq import SurrogateForward, half_jump_threshold, qoi_distributions, run_ensemble

log = logging.getLogger("stochbl")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def _load(args) -> ScenarioConfig:
    if args.config:
        try:
            doc = yaml.safe_load(Path(args.config).read_text())
        except OSError as exc:
            raise ValidationError([f"cannot read {args.config}: {exc}"]) from exc
        except yaml.YAMLError as exc:
            raise ValidationError([f"{args.config} is not valid YAML/JSON: {exc}"]) from exc
        if not isinstance(doc, dict):
            raise ValidationError(["the configuration must be a mapping"])
        if args.preset:
            doc = {**doc, "preset": args.preset}
    elif args.preset:
        doc = {"preset": args.preset}
    else:
        raise ValidationError(["one of --preset or --config is required"])
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.samples is not None:
        overrides["samples"] = args.samples
    if overrides:
        doc = {**doc, **overrides}
    cfg = parse_config(doc)
    if getattr(args, "iterations", None) is not None:
        if cfg.training is not None:
            cfg = replace(cfg, training=replace(cfg.training, iterations=args.iterations))
        if cfg.moments_training is not None:
            cfg = replace(cfg, moments_training=replace(cfg.moments_training, iterations=args.iterations))
    return cfg


def _out(args, cfg, default):
    out = Path(args.out or cfg.out or f"runs/{cfg.scenario}/{default}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(out, cfg, files, wall_times=None):
    m = RunManifest(cfg.scenario, config_hash(cfg), cfg.seed, wall_times=wall_times or {})
    (out / "config.yaml").write_text(yaml.safe_dump(to_document(cfg), sort_keys=True))
    for f in ["config.yaml", *files]:
        m.artifacts[f] = sha256_file(out / f)
    m.status = "ok"
    m.write(out)
    print(f"wrote {len(files) + 1} artifacts to {out}")
    return m


# -- commands ------------------------------------------------------------------


def cmd_presets(args):
    for name in preset_names():
        d = PRESETS[name]
        v = d["velocity"]
        detail = v.get("field") or v.get("distribution", {}).get("kind", "")
        extras = [k for k in ("training", "moments", "inference_velocity") if k in d]
        print(f"{name:22s} {v['kind']:13s} {detail:17s} {' '.join(extras)}")
    return EXIT_OK


def cmd_solve(args):
    """Deterministic solves of the first realization (or a constant ``--velocity``)."""
    cfg = _load(args)
    out = _out(args, cfg, "solve")
    p = cfg.fluid
    g = Grid1D(cfg.grid_cells)
    if args.velocity is not None:
        if not args.velocity > 0:
            raise ValidationError(["--velocity must be > 0"])
        spec, v_cells = Constant(args.velocity), np.full(g.n_cells, args.velocity)
    else:
        smp = draw_scenario_fields(cfg, 1)[0]
        spec, v_cells = smp.spec, np.broadcast_to(np.asarray(smp.v_cells, float), (g.n_cells,))
    times = tuple(args.times or cfg.eval.profile_times)
    x = cfg.eval.grids().x
    hull = welge_hull(p)
    rows = []
    if args.method in ("moc", "both"):
        for t in times:
            if isinstance(spec, Constant):
                S = moc_saturation(p, spec.v_d, x, t, hull)
            else:
                S = tof_saturation(p, lambda s: eval_field(spec, s), x, t, hull)
            rows += [("moc", t, xi, si) for xi, si in zip(x, S)]
    if args.method in ("fvm", "both"):
        res = fvm_solve(p, v_cells, g, max(times), snapshots=np.array(sorted(times)))
        for k, t in enumerate(res.t):
            rows += [("fvm", t, xi, si) for xi, si in zip(g.centers, res.S[k])]
    with open(out / "solution.csv", "w") as fh:
        fh.write("method,t,x,S\n")
        for m, t, xi, si in rows:
            fh.write(f"{m},{t:.10g},{xi:.10g},{si:.10g}\n")
    _finish(out, cfg, ["solution.csv"])
    return EXIT_OK


def cmd_sample(args):
    cfg = _load(args)
    out = _out(args, cfg, "sample")
    samples = draw_scenario_fields(cfg)
    x = np.linspace(0.0, 1.0, args.points)
    table = sample_velocity_table(samples, x)
    np.savetxt(out / "fields.csv", table, delimiter=",", header="realization,x,v", comments="",
               fmt=["%d", "%.10g", "%.10g"])
    with open(out / "thetas.csv", "w") as fh:
        dim = max((np.size(s.theta) for s in samples), default=0)
        fh.write(",".join(["realization"] + [f"theta_{j}" for j in range(dim)]) + "\n")
        for i, s in enumerate(samples):
            th = np.atleast_1d(np.asarray(s.theta, float))
            fh.write(",".join([str(i)] + [f"{v:.10g}" for v in th]) + "\n")
    _finish(out, cfg, ["fields.csv", "thetas.csv"])
    return EXIT_OK


def cmd_train(args):
    cfg = _load(args)
    if cfg.training is None:
        raise ValidationError(["training: the scenario has no training section"])
    out = _out(args, cfg, "train")
    est = train_surrogate(cfg)
    est.save(out / "model.npz")
    write_history(out / "loss_history.csv", est.history_, est.history_columns_)
    print(f"final loss {est.history_[-1, 0]:.4e} after {len(est.history_)} iterations ({est.train_time_:.1f} s)")
    _finish(out, cfg, ["model.npz", "loss_history.csv"], {"training": est.train_time_})
    return EXIT_OK


def cmd_infer(args):
    cfg = _load(args)
    if not args.model:
        raise ValidationError(["infer: --model PATH is required"])
    out = _out(args, cfg, "infer")
    est = ParameterizedPINN.load(args.model)
    samples = draw_scenario_fields(cfg)
    par = cfg.inference_velocity or cfg.velocity
    ens = run_ensemble(SurrogateForward(est.model_, cfg.fluid), par, len(samples), cfg.eval.grids(), cfg.seed,
                       scenario=cfg.scenario, samples=samples)
    write_profiles_csv(out / "profiles_surrogate.csv", ens)
    delta = cfg.eval.delta if cfg.eval.delta is not None else half_jump_threshold(cfg.fluid)
    files = ["profiles_surrogate.csv"]
    for kind, ds in qoi_distributions(ens, cfg.fluid, delta).items():
        write_qoi_csv(out / f"qoi_surrogate_{kind}.csv", ds)
        files.append(f"qoi_surrogate_{kind}.csv")
    _finish(out, cfg, files)
    return EXIT_OK


def cmd_uq(args):
    cfg = _load(args)
    out = _out(args, cfg, "uq")
    model = ParameterizedPINN.load(args.model).model_ if args.model else None
    manifest, results = run_scenario(cfg, out, model=model)
    cmp = results.get("comparison")
    if cmp is not None:
        for kind, q in cmp.qois.items():
            print(f"{kind:18s} avg W1 {q['avg_w1']:.4g}  uniform {q['avg_w1_uniform']:.4g}  "
                  f"relative {100 * q['relative_difference']:.1f}%")
    print(f"wrote {len(manifest.artifacts)} artifacts to {out}")
    return EXIT_OK


def cmd_moments(args):
    cfg = _load(args)
    if cfg.moments is None:
        raise ValidationError(["moments: the scenario has no moments section"])
    out = _out(args, cfg, "moments")
    sols = [moments_fd_solve(cfg.moments, cfg.fluid)]
    sols.append(moments_mc(cfg.moments, cfg.fluid, n=cfg.moments_samples, seed=cfg.seed))
    files = ["moments.csv"]
    if cfg.moments_training is not None and not args.no_train:
        pinn = moments_pinn_train(cfg.moments, cfg.fluid, cfg.moments_training)
        sols.append(pinn)
        write_history(out / "moments_loss_history.csv", pinn.extra["history"], pinn.extra["columns"])
        files.append("moments_loss_history.csv")
    write_moments_csv(out / "moments.csv", sols)
    _finish(out, cfg, files)
    return EXIT_OK


def cmd_bench(args):
    cfg = _load(args)
    out = _out(args, cfg, "bench")
    model = ParameterizedPINN.load(args.model).model_ if args.model else None
    report = bench(cfg, model=model)
    (out / "bench.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report, indent=2))
    _finish(out, cfg, ["bench.json"])
    return EXIT_OK


COMMANDS = {
    "solve": (cmd_solve, "deterministic MOC / finite-volume solve of one realization"),
    "sample": (cmd_sample, "draw velocity field realizations"),
    "train": (cmd_train, "train the parameterized surrogate"),
    "infer": (cmd_infer, "evaluate a trained surrogate over an ensemble"),
    "uq": (cmd_uq, "reference and surrogate ensembles plus their comparison"),
    "moments": (cmd_moments, "moment equations versus Monte Carlo"),
    "bench": (cmd_bench, "time the Monte Carlo and surrogate paths"),
    "presets": (cmd_presets, "list the built-in scenarios"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="stochbl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        if name == "presets":
            continue
        sp.add_argument("--config", metavar="PATH", help="scenario document (YAML or JSON)")
        sp.add_argument("--preset", metavar="NAME", help="start from a built-in scenario")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--out", metavar="DIR", help="output directory")
        sp.add_argument("--samples", type=int, help="override the ensemble size")
        if name in ("train", "uq", "moments", "bench"):
            sp.add_argument("--iterations", type=int, help="override the training iterations")
        if name in ("infer", "uq", "bench"):
            sp.add_argument("--model", metavar="PATH", help="trained surrogate checkpoint (model.npz)")
        if name == "solve":
            sp.add_argument("--method", choices=("moc", "fvm", "both"), default="both")
            sp.add_argument("--velocity", type=float, help="solve a constant velocity instead")
            sp.add_argument("--times", type=float, nargs="+", help="output times")
        if name == "sample":
            sp.add_argument("--points", type=int, default=256, help="x points per field in fields.csv")
        if name == "moments":
            sp.add_argument("--no-train", action="store_true", help="skip the moments network")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    func = COMMANDS[args.command][0]
    try:
        return func(args)
    except ValidationError as exc:
        print("invalid configuration:", file=sys.stderr)
        for e in exc.errors:
            print(f"  - {e}", file=sys.stderr)
        return EXIT_INVALID
    except PhaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _code(exc.cause)
    except StochBLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _code(exc)


def _code(exc):
    """Invalid inputs map to 2; solver, sampling and training failures to 3."""
    if isinstance(exc, (ValidationError, ParameterError, ConfigurationError)):
        return EXIT_INVALID
    return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
