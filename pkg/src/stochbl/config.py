"""Scenario documents (YAML or JSON), the preset catalogue and strict validation."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from .exceptions import ParameterError, ValidationError
from .fields import (
    AffineVelocity,
    BimodalMixture,
    ConstantVelocity,
    ExpCovVelocity,
    FixedFieldVelocity,
    FourierVelocity,
    HighFreqCosine,
    LocalNormalVelocity,
    PeriodicVelocity,
    TanhStairs,
    TruncatedNormal,
    Uniform,
)
from .moments import MomentsConfig
from .physics import FluidParams
from .pinn.training import FourierConfig, TrainingConfig
from .uq import DEFAULT_LOCATIONS, DEFAULT_TIMES, EvalGrids

__all__ = [
    "EvalSettings",
    "ScenarioConfig",
    "PRESETS",
    "preset_names",
    "preset_document",
    "parse_config",
    "load_config",
    "to_document",
    "config_hash",
]


@dataclass(frozen=True)
class EvalSettings:
    n_x: int = 501
    profile_times: tuple = DEFAULT_TIMES
    series_locations: tuple = DEFAULT_LOCATIONS
    n_series_times: int = 1001
    t_max: float = 1.0
    delta: float | None = None
    baseline: str = "domain"

    def grids(self, x_max=1.0) -> EvalGrids:
        return EvalGrids(
            np.linspace(0.0, x_max, self.n_x),
            self.profile_times,
            self.series_locations,
            np.linspace(0.0, self.t_max, self.n_series_times),
        )


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    seed: int
    fluid: FluidParams
    velocity: object
    samples: int = 1000
    reference: str = "moc"
    grid_cells: int = 256
    eval: EvalSettings = EvalSettings()
    training: TrainingConfig | None = None
    inference_velocity: object = None
    moments: MomentsConfig | None = None
    moments_samples: int = 500
    moments_training: TrainingConfig | None = None
    out: str | None = None


# -- document <-> objects ----------------------------------------------------

_DIST_KEYS = {
    "truncated-normal": {"mu", "sigma", "low", "up"},
    "uniform": {"low", "up"},
    "bimodal": {"weights", "components"},
}


def _dist_from_doc(doc, path, errors):
    if not isinstance(doc, dict):
        errors.append(f"{path}: expected a mapping")
        return None
    kind = doc.get("kind")
    if kind not in _DIST_KEYS:
        errors.append(f"{path}.kind: unknown distribution {kind!r}")
        return None
    extra = set(doc) - _DIST_KEYS[kind] - {"kind"}
    if extra:
        errors.append(f"{path}: unknown keys {sorted(extra)}")
    try:
        if kind == "truncated-normal":
            missing = {"mu", "sigma"} - set(doc)
            if missing:
                errors.append(f"{path}: missing {sorted(missing)}")
                return None
            return TruncatedNormal(
                float(doc["mu"]),
                float(doc["sigma"]),
                float(doc.get("low", "-inf")),
                float(doc.get("up", "inf")),
            )
        if kind == "uniform":
            return Uniform(float(doc["low"]), float(doc["up"]))
        comps = [_dist_from_doc(c, f"{path}.components[{i}]", errors) for i, c in enumerate(doc.get("components", []))]
        if any(c is None for c in comps):
            return None
        return BimodalMixture(tuple(float(w) for w in doc["weights"]), tuple(comps))
    except KeyError as exc:
        errors.append(f"{path}: missing {exc.args[0]!r}")
    except (ParameterError, TypeError, ValueError) as exc:
        errors.append(f"{path}: {exc}")
    return None


def _dist_to_doc(d):
    if isinstance(d, TruncatedNormal):
        return {"kind": "truncated-normal", "mu": d.mu, "sigma": d.sigma, "low": d.low, "up": d.up}
    if isinstance(d, Uniform):
        return {"kind": "uniform", "low": d.low, "up": d.up}
    return {
        "kind": "bimodal",
        "weights": list(d.weights),
        "components": [_dist_to_doc(c) for c in d.components],
    }


_VEL_KEYS = {
    "constant": {"distribution"},
    "affine": {"distribution", "b"},
    "periodic": {"distribution", "k", "b"},
    "fourier": {"distribution", "n_modes", "amplitude", "b"},
    "local-normal": {"distribution"},
    "expcov": {"v_bar", "sigma_Y2", "s"},
    "fixed": {"field"},
}
_FIXED = {"tanh-stairs": TanhStairs, "high-freq-cosine": HighFreqCosine}


def _velocity_from_doc(doc, path, errors):
    if not isinstance(doc, dict):
        errors.append(f"{path}: expected a mapping")
        return None
    kind = doc.get("kind")
    if kind not in _VEL_KEYS:
        errors.append(f"{path}.kind: unknown velocity kind {kind!r}")
        return None
    extra = set(doc) - _VEL_KEYS[kind] - {"kind"}
    if extra:
        errors.append(f"{path}: unknown keys {sorted(extra)}")
    dist = None
    if "distribution" in _VEL_KEYS[kind]:
        if "distribution" not in doc:
            errors.append(f"{path}.distribution: required")
            return None
        dist = _dist_from_doc(doc["distribution"], f"{path}.distribution", errors)
        if dist is None:
            return None
    try:
        if kind == "constant":
            return ConstantVelocity(dist)
        if kind == "affine":
            return AffineVelocity(dist, float(doc.get("b", 0.5)))
        if kind == "periodic":
            return PeriodicVelocity(dist, float(doc.get("k", 1.0)), float(doc.get("b", 0.5)))
        if kind == "fourier":
            return FourierVelocity(
                dist, int(doc.get("n_modes", 5)), float(doc.get("amplitude", 1.0)), float(doc.get("b", 1.0))
            )
        if kind == "local-normal":
            if not isinstance(dist, TruncatedNormal):
                errors.append(f"{path}.distribution: local-normal needs a truncated normal")
                return None
            return LocalNormalVelocity(dist)
        if kind == "expcov":
            v = ExpCovVelocity(float(doc.get("v_bar", 1.0)), float(doc.get("sigma_Y2", 0.1)), float(doc.get("s", 2.0)))
            if v.sigma_Y2 < 0 or not v.s > 0 or not v.v_bar > 0:
                errors.append(f"{path}: need v_bar > 0, sigma_Y2 >= 0, s > 0")
                return None
            return v
        name = doc.get("field")
        if name not in _FIXED:
            errors.append(f"{path}.field: unknown field {name!r}")
            return None
        return FixedFieldVelocity(_FIXED[name]())
    except (TypeError, ValueError) as exc:
        errors.append(f"{path}: {exc}")
    return None


def _velocity_to_doc(v):
    if isinstance(v, ConstantVelocity):
        return {"kind": "constant", "distribution": _dist_to_doc(v.dist)}
    if isinstance(v, AffineVelocity):
        return {"kind": "affine", "distribution": _dist_to_doc(v.dist), "b": v.b}
    if isinstance(v, PeriodicVelocity):
        return {"kind": "periodic", "distribution": _dist_to_doc(v.dist), "k": v.k, "b": v.b}
    if isinstance(v, FourierVelocity):
        return {
            "kind": "fourier",
            "distribution": _dist_to_doc(v.dist),
            "n_modes": v.n_modes,
            "amplitude": v.amplitude,
            "b": v.b,
        }
    if isinstance(v, LocalNormalVelocity):
        return {"kind": "local-normal", "distribution": _dist_to_doc(v.dist)}
    if isinstance(v, ExpCovVelocity):
        return {"kind": "expcov", "v_bar": v.v_bar, "sigma_Y2": v.sigma_Y2, "s": v.s}
    name = {TanhStairs: "tanh-stairs", HighFreqCosine: "high-freq-cosine"}[type(v.field_spec)]
    return {"kind": "fixed", "field": name}


def _dataclass_from_doc(cls, doc, path, errors, convert=None):
    if doc is None:
        return None
    if not isinstance(doc, dict):
        errors.append(f"{path}: expected a mapping")
        return None
    names = {f.name for f in fields(cls)}
    extra = set(doc) - names
    if extra:
        errors.append(f"{path}: unknown keys {sorted(extra)}")
    kwargs = {k: v for k, v in doc.items() if k in names}
    if convert:
        kwargs = convert(kwargs)
    try:
        return cls(**kwargs)
    except (ParameterError, TypeError, ValueError) as exc:
        errors.append(f"{path}: {exc}")
        return None


def _tuplify(kwargs, keys):
    for k in keys:
        if k in kwargs and isinstance(kwargs[k], list):
            kwargs[k] = tuple(tuple(v) if isinstance(v, list) else v for v in kwargs[k])
    return kwargs


def _training_from_doc(doc, errors, path="training"):
    if doc is None:
        return None
    if isinstance(doc, dict) and "fourier" in doc:
        fdoc = doc["fourier"]
        sub = _dataclass_from_doc(FourierConfig, fdoc, f"{path}.fourier", errors)
        doc = {**doc, "fourier": sub if sub is not None else FourierConfig()}
    return _dataclass_from_doc(
        TrainingConfig,
        doc,
        path,
        errors,
        lambda kw: _tuplify(kw, ("multipliers", "x_range", "t_range", "theta_ranges")),
    )


_TOP_KEYS = {
    "preset",
    "scenario",
    "seed",
    "fluid",
    "velocity",
    "samples",
    "reference",
    "grid_cells",
    "eval",
    "training",
    "inference_velocity",
    "moments",
    "moments_samples",
    "moments_training",
    "out",
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("velocity", "inference_velocity"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_config(document) -> ScenarioConfig:
    """Validate a scenario document (mapping, YAML or JSON text).

    A ``preset`` key starts from a catalogue entry and overrides it.  All
    problems are collected and raised together as :class:`ValidationError`.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise ValidationError([f"document is not valid YAML/JSON: {exc}"]) from exc
    if not isinstance(document, dict):
        raise ValidationError(["document must be a mapping"])
    errors = []
    doc = document
    if "preset" in doc:
        name = doc["preset"]
        if name not in PRESETS:
            raise ValidationError([f"preset: unknown preset {name!r} (see `stochbl presets`)"])
        doc = _merge(PRESETS[name], {k: v for k, v in doc.items() if k != "preset"})
    extra = set(doc) - _TOP_KEYS
    if extra:
        errors.append(f"unknown top-level keys {sorted(extra)}")
    if "seed" not in doc or not isinstance(doc.get("seed"), int):
        errors.append("seed: an integer seed is required")
    fluid = _dataclass_from_doc(FluidParams, doc.get("fluid", {}), "fluid", errors)
    if "velocity" not in doc:
        errors.append("velocity: required")
        velocity = None
    else:
        velocity = _velocity_from_doc(doc["velocity"], "velocity", errors)
    inference_velocity = None
    if doc.get("inference_velocity") is not None:
        inference_velocity = _velocity_from_doc(doc["inference_velocity"], "inference_velocity", errors)
    ev = _dataclass_from_doc(
        EvalSettings,
        doc.get("eval", {}),
        "eval",
        errors,
        lambda kw: _tuplify(kw, ("profile_times", "series_locations")),
    )
    training = _training_from_doc(doc.get("training"), errors)
    moments_training = _training_from_doc(doc.get("moments_training"), errors, "moments_training")
    if training is not None and isinstance(velocity, ExpCovVelocity):
        errors.append("training: exponential-covariance fields have no finite parameterization to train on")
    if training is not None and velocity is not None and not training.velocity_net:
        dim = getattr(velocity, "dim", 0)
        if len(training.theta_ranges) != dim:
            errors.append(f"training.theta_ranges: expected {dim} ranges for a {velocity.name} field")
    if training is not None and training.velocity_net and getattr(velocity, "dim", 0):
        errors.append("training.velocity_net: only fixed fields can use the velocity subnetwork")
    if moments_training is not None and moments_training.theta_ranges:
        errors.append("moments_training.theta_ranges: the moments network takes (x, t) only")
    moments = _dataclass_from_doc(
        MomentsConfig, doc.get("moments"), "moments", errors, lambda kw: _tuplify(kw, ("snapshots",))
    )
    if moments_training is not None and moments is None:
        errors.append("moments_training: needs a moments section")
    samples = doc.get("samples", 1000)
    if not isinstance(samples, int) or samples < 1:
        errors.append("samples: must be a positive integer")
    ms = doc.get("moments_samples", 500)
    if not isinstance(ms, int) or ms < 1:
        errors.append("moments_samples: must be a positive integer")
    reference = doc.get("reference", "moc")
    if reference not in ("moc", "fvm"):
        errors.append("reference: must be 'moc' or 'fvm'")
    if ev is not None and ev.baseline not in ("domain", "range"):
        errors.append("eval.baseline: must be 'domain' or 'range'")
    cells = doc.get("grid_cells", 256)
    if not isinstance(cells, int) or cells < 2:
        errors.append("grid_cells: must be an integer >= 2")
    if errors:
        raise ValidationError(errors)
    return ScenarioConfig(
        scenario=str(doc.get("scenario", document.get("preset", "custom"))),
        seed=int(doc["seed"]),
        fluid=fluid,
        velocity=velocity,
        samples=samples,
        reference=reference,
        grid_cells=cells,
        eval=ev,
        training=training,
        inference_velocity=inference_velocity,
        moments=moments,
        moments_samples=ms,
        moments_training=moments_training,
        out=doc.get("out"),
    )


def load_config(path) -> ScenarioConfig:
    return parse_config(Path(path).read_text())


def _listify(o):
    if isinstance(o, dict):
        return {k: _listify(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_listify(v) for v in o]
    return o


def to_document(cfg: ScenarioConfig) -> dict:
    """Plain mapping that :func:`parse_config` turns back into ``cfg``."""
    doc = {
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "fluid": asdict(cfg.fluid),
        "velocity": _velocity_to_doc(cfg.velocity),
        "samples": cfg.samples,
        "reference": cfg.reference,
        "grid_cells": cfg.grid_cells,
        "eval": asdict(cfg.eval),
        "moments_samples": cfg.moments_samples,
    }
    if cfg.training is not None:
        doc["training"] = cfg.training.to_dict()
    if cfg.inference_velocity is not None:
        doc["inference_velocity"] = _velocity_to_doc(cfg.inference_velocity)
    if cfg.moments is not None:
        doc["moments"] = asdict(cfg.moments)
    if cfg.moments_training is not None:
        doc["moments_training"] = cfg.moments_training.to_dict()
    if cfg.out is not None:
        doc["out"] = cfg.out
    return _listify(doc)


def config_hash(cfg: ScenarioConfig) -> str:
    text = json.dumps(to_document(cfg), sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


# -- presets ---------------------------------------------------------------------

_TRIVIAL = {"S_wc": 0.0, "S_nr": 0.0, "M": 1.0, "S_inj": 1.0, "S_init": 0.0}
_NARROW = {"kind": "truncated-normal", "mu": 1.0, "sigma": 0.3, "low": 0.5, "up": 2.0}
_WIDE = {"kind": "truncated-normal", "mu": 4.0, "sigma": 2.0, "low": 0.1, "up": 10.0}
_BIMODAL = {
    "kind": "bimodal",
    "weights": [0.5, 0.5],
    "components": [
        {"kind": "truncated-normal", "mu": 0.8, "sigma": 0.15, "low": 0.5, "up": 2.0},
        {"kind": "truncated-normal", "mu": 1.6, "sigma": 0.15, "low": 0.5, "up": 2.0},
    ],
}
_THETA = {"kind": "truncated-normal", "mu": 1.0, "sigma": 0.3}
_THETA_BOUNDED = {"kind": "truncated-normal", "mu": 1.0, "sigma": 0.3, "low": 0.5, "up": 1.3}


def _train(theta_ranges, fourier=False, **kw):
    doc = {
        "depth": 8,
        "width": 20,
        "n_samples": 5000,
        "iterations": 20000,
        "lr": 1e-3,
        "lr_final_factor": 0.05,
        "theta_ranges": [list(r) for r in theta_ranges],
    }
    if fourier:
        doc["fourier"] = {"enabled": True, "n_features": 64, "scale": 1.0}
    doc.update(kw)
    return doc


def _preset(velocity, training=None, reference="moc", fluid=None, **kw):
    doc = {
        "seed": 0,
        "fluid": dict(fluid or _TRIVIAL),
        "velocity": velocity,
        "samples": 1000,
        "reference": reference,
    }
    if training is not None:
        doc["training"] = training
    doc.update(kw)
    return doc


PRESETS = {
    "homogeneous-narrow": _preset(
        {"kind": "constant", "distribution": _NARROW}, _train([(0.5, 2.0)])
    ),
    "homogeneous-wide": _preset({"kind": "constant", "distribution": _WIDE}, _train([(0.1, 10.0)])),
    "residual-sats": _preset(
        {"kind": "constant", "distribution": _NARROW},
        _train([(0.5, 2.0)]),
        fluid={"S_wc": 0.1, "S_nr": 0.05, "M": 2.0, "S_inj": 1.0, "S_init": 0.15},
    ),
    "bimodal": _preset(
        {"kind": "constant", "distribution": _NARROW},
        _train([(0.5, 2.0)]),
        inference_velocity={"kind": "constant", "distribution": _BIMODAL},
    ),
    "het-normal": _preset(
        {"kind": "local-normal", "distribution": {"kind": "truncated-normal", "mu": 1.0, "sigma": 0.2, "low": 0.5, "up": 2.0}},
        _train([(0.5, 2.0)]),
    ),
    "het-wide": _preset(
        {"kind": "local-normal", "distribution": {"kind": "truncated-normal", "mu": 4.0, "sigma": 1.0, "low": 0.1, "up": 10.0}},
        _train([(0.1, 10.0)]),
    ),
    "tanh-stairs": _preset(
        {"kind": "fixed", "field": "tanh-stairs"}, _train([], velocity_net=True), samples=1
    ),
    "high-freq-cosine": _preset(
        {"kind": "fixed", "field": "high-freq-cosine"}, _train([], velocity_net=True), samples=1
    ),
    "affine": _preset({"kind": "affine", "distribution": _THETA, "b": 0.5}, _train([(-0.2, 2.2)])),
    "periodic-k1": _preset(
        {"kind": "periodic", "distribution": _THETA, "k": 1.0, "b": 0.5}, _train([(-0.2, 2.2)])
    ),
    "periodic-k5": _preset(
        {"kind": "periodic", "distribution": _THETA_BOUNDED, "k": 5.0, "b": 1.5}, _train([(0.5, 1.3)])
    ),
    "periodic-k25": _preset(
        {"kind": "periodic", "distribution": _THETA_BOUNDED, "k": 25.0, "b": 1.5}, _train([(0.5, 1.3)])
    ),
    "periodic-k25-fourier": _preset(
        {"kind": "periodic", "distribution": _THETA_BOUNDED, "k": 25.0, "b": 1.5},
        _train([(0.5, 1.3)], fourier=True),
    ),
    "fourier5": _preset(
        {"kind": "fourier", "distribution": {"kind": "uniform", "low": 0.0, "up": 1.0}, "n_modes": 5, "amplitude": 1.0, "b": 1.0},
        _train([(0.0, 1.0)] * 5),
    ),
    "fourier5-wide": _preset(
        {"kind": "fourier", "distribution": {"kind": "uniform", "low": 0.0, "up": 3.0}, "n_modes": 5, "amplitude": 1.0, "b": 2.0},
        _train([(0.0, 3.0)] * 5),
    ),
    "expcov-s2": _preset(
        {"kind": "expcov", "v_bar": 1.0, "sigma_Y2": 0.1, "s": 2.0},
        reference="fvm",
        samples=500,
        moments={"v_bar": 1.0, "sigma_Y2": 0.1, "s": 2.0},
        moments_training=_train([], iterations=5000),
    ),
    "expcov-s1.5": _preset(
        {"kind": "expcov", "v_bar": 1.0, "sigma_Y2": 0.1, "s": 1.5},
        reference="fvm",
        samples=500,
        moments={"v_bar": 1.0, "sigma_Y2": 0.1, "s": 1.5},
        moments_training=_train([], iterations=5000),
    ),
}

for _name, _doc in PRESETS.items():
    _doc["scenario"] = _name


def preset_names():
    return sorted(PRESETS)


def preset_document(name) -> dict:
    if name not in PRESETS:
        raise ValidationError([f"unknown preset {name!r}"])
    return copy.deepcopy(PRESETS[name])
