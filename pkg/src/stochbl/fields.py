"""Random inputs: scalar velocity laws and spatial velocity-field parameterizations.

All sampling goes through ``numpy.random.Generator`` backed by PCG64.
Ensembles derive one independent stream per realization with
``numpy.random.SeedSequence(seed).spawn(n)`` (see :func:`realization_rngs`),
which is portable across platforms and independent of execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .exceptions import NumericalError, ParameterError, SamplingError

__all__ = [
    "TruncatedNormal",
    "Uniform",
    "BimodalMixture",
    "DistributionSpec",
    "sample_scalar",
    "truncated_normal_mean",
    "box_muller_pair",
    "Constant",
    "Affine",
    "Periodic",
    "FourierSeries",
    "TanhStairs",
    "HighFreqCosine",
    "Gridded",
    "ExpCovGP",
    "VelocityFieldSpec",
    "eval_field",
    "FieldSample",
    "sample_expcov_field",
    "exp_covariance",
    "realization_rngs",
    "make_rng",
    "field_to_csv",
    "ConstantVelocity",
    "AffineVelocity",
    "PeriodicVelocity",
    "FourierVelocity",
    "LocalNormalVelocity",
    "ExpCovVelocity",
    "FixedFieldVelocity",
]

MAX_REJECTION_DRAWS = 1_000_000


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def realization_rngs(seed, n):
    """One PCG64 generator per realization, derived by ``SeedSequence.spawn``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(n)]


# -- scalar distributions -----------------------------------------------------


@dataclass(frozen=True)
class TruncatedNormal:
    mu: float
    sigma: float
    low: float = -math.inf
    up: float = math.inf

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError("sigma must be > 0")
        if not self.low < self.up:
            raise ParameterError(f"low ({self.low}) must be < up ({self.up})")

    @property
    def support(self):
        return self.low, self.up


@dataclass(frozen=True)
class Uniform:
    low: float
    up: float

    def __post_init__(self):
        if not self.low < self.up:
            raise ParameterError(f"low ({self.low}) must be < up ({self.up})")

    @property
    def support(self):
        return self.low, self.up


@dataclass(frozen=True)
class BimodalMixture:
    weights: tuple
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        if w.shape != (2,) or len(self.components) != 2:
            raise ParameterError("a bimodal mixture needs exactly two weights and components")
        if np.any(w < 0) or not math.isclose(float(w.sum()), 1.0, abs_tol=1e-12):
            raise ParameterError("mixture weights must be >= 0 and sum to 1")
        if not all(isinstance(c, TruncatedNormal) for c in self.components):
            raise ParameterError("mixture components must be TruncatedNormal")

    @property
    def support(self):
        return (
            min(c.low for c in self.components),
            max(c.up for c in self.components),
        )


DistributionSpec = Union[TruncatedNormal, Uniform, BimodalMixture]


def _sample_truncnorm(d: TruncatedNormal, rng, n):
    out = np.empty(n)
    filled = 0
    drawn = 0
    while filled < n:
        want = max(2 * (n - filled), 64)
        z = d.mu + d.sigma * rng.standard_normal(want)
        drawn += want
        keep = z[(z >= d.low) & (z <= d.up)]
        take = min(len(keep), n - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
        if filled < n and drawn > MAX_REJECTION_DRAWS:
            raise SamplingError(
                f"truncated normal rejection exceeded {MAX_REJECTION_DRAWS} draws "
                f"(mu={d.mu}, sigma={d.sigma}, [{d.low}, {d.up}])"
            )
    return out


def sample_scalar(d: DistributionSpec, rng, size=None):
    """Draw from a scalar law; returns a float when ``size`` is None."""
    rng = make_rng(rng)
    n = 1 if size is None else int(np.prod(size))
    if isinstance(d, Uniform):
        out = d.low + (d.up - d.low) * rng.random(n)
    elif isinstance(d, TruncatedNormal):
        out = _sample_truncnorm(d, rng, n)
    elif isinstance(d, BimodalMixture):
        pick = rng.random(n) < d.weights[0]
        out = np.empty(n)
        n0 = int(pick.sum())
        out[pick] = _sample_truncnorm(d.components[0], rng, n0)
        out[~pick] = _sample_truncnorm(d.components[1], rng, n - n0)
    else:
        raise ParameterError(f"unknown distribution {d!r}")
    if size is None:
        return float(out[0])
    return out.reshape(size)


def truncated_normal_mean(d: TruncatedNormal) -> float:
    from scipy.stats import truncnorm

    a, b = (d.low - d.mu) / d.sigma, (d.up - d.mu) / d.sigma
    return float(truncnorm.mean(a, b, loc=d.mu, scale=d.sigma))


def box_muller_pair(U, V):
    """Standard normal value ``sqrt(-2 ln U) cos(2 pi V)`` from two uniforms."""
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    if np.any(U <= 0) or np.any(U > 1):
        raise ParameterError("U must lie in (0, 1]")
    if np.any(V < 0) or np.any(V >= 1):
        raise ParameterError("V must lie in [0, 1)")
    out = np.sqrt(-2.0 * np.log(U)) * np.cos(2.0 * np.pi * V)
    return out if out.ndim else float(out)


# -- velocity fields ------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    v_d: float


@dataclass(frozen=True)
class Affine:
    theta: float
    b: float


@dataclass(frozen=True)
class Periodic:
    theta: float
    k: float
    b: float


@dataclass(frozen=True)
class FourierSeries:
    theta: tuple
    amplitude: float = 1.0
    b: float = 1.0


@dataclass(frozen=True)
class TanhStairs:
    pass


@dataclass(frozen=True)
class HighFreqCosine:
    pass


@dataclass(frozen=True)
class Gridded:
    values: tuple
    x_max: float = 1.0


@dataclass(frozen=True)
class ExpCovGP:
    v_bar: float
    sigma_Y2: float
    s: float


VelocityFieldSpec = Union[
    Constant, Affine, Periodic, FourierSeries, TanhStairs, HighFreqCosine, Gridded, ExpCovGP
]


def eval_field(spec: VelocityFieldSpec, x):
    """Evaluate a field with drawn parameters at positions ``x``."""
    x = np.asarray(x, dtype=float)
    if isinstance(spec, Constant):
        out = np.full(x.shape, float(spec.v_d))
    elif isinstance(spec, Affine):
        out = spec.theta * x + spec.b
    elif isinstance(spec, Periodic):
        out = spec.theta * np.sin(spec.k * x) + spec.b
    elif isinstance(spec, FourierSeries):
        k = np.arange(1, len(spec.theta) + 1)
        modes = np.sin(2.0 * np.pi * np.multiply.outer(x, k))
        out = spec.amplitude * (modes @ np.asarray(spec.theta, float)) + spec.b
    elif isinstance(spec, TanhStairs):
        out = (
            2.0
            - np.tanh(80.0 * (x - 0.25)) / 4.0
            + np.tanh(80.0 * (x - 0.5)) / 4.0
            + np.tanh(80.0 * (x - 0.75)) / 4.0
            + 0.75
        )
    elif isinstance(spec, HighFreqCosine):
        out = 1.5 + np.cos(100.0 * x)
    elif isinstance(spec, Gridded):
        vals = np.asarray(spec.values, float)
        idx = np.clip((x / spec.x_max * len(vals)).astype(int), 0, len(vals) - 1)
        out = vals[idx]
    elif isinstance(spec, ExpCovGP):
        raise ParameterError("ExpCovGP must be sampled (sample_expcov_field) before evaluation")
    else:
        raise ParameterError(f"unknown field spec {spec!r}")
    return out if out.ndim else float(out)


def is_positive(spec, x_max=1.0, n=1000) -> bool:
    return bool(np.all(eval_field(spec, np.linspace(0.0, x_max, n)) > 0))


@dataclass
class FieldSample:
    """One realization: drawn spec, per-cell velocities and the surrogate input vector."""

    spec: VelocityFieldSpec
    v_cells: np.ndarray
    theta: np.ndarray
    params: dict = field(default_factory=dict)


def exp_covariance(x, sigma_Y2, s):
    d = np.abs(np.subtract.outer(x, x))
    return sigma_Y2 * np.exp(-d / s)


def _cholesky_with_jitter(C):
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(C + 1e-12 * np.eye(len(C)))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance factorization failed after jitter") from exc


def sample_expcov_field(sigma_Y2, s, v_bar, g, rng, size=None):
    """Log-normal velocity field with exponential log-covariance on the grid centers.

    ``Y ~ GP(0, sigma_Y2 exp(-|dx|/s))`` and ``v = v_bar exp(Y) / exp(sigma_Y2/2)``
    so that ``E[v] = v_bar`` and ``v > 0``.
    """
    if sigma_Y2 < 0:
        raise ParameterError("sigma_Y2 must be >= 0")
    if not s > 0:
        raise ParameterError("s must be > 0")
    rng = make_rng(rng)
    n = 1 if size is None else int(size)
    x = g.centers
    if sigma_Y2 == 0:
        Y = np.zeros((n, g.n_cells))
    else:
        L = _cholesky_with_jitter(exp_covariance(x, sigma_Y2, s))
        Y = rng.standard_normal((n, g.n_cells)) @ L.T
    v = v_bar * np.exp(Y - 0.5 * sigma_Y2)
    samples = [
        FieldSample(
            Gridded(tuple(v[i]), g.x_max),
            v[i],
            Y[i],
            {"v_bar": v_bar, "sigma_Y2": sigma_Y2, "s": s},
        )
        for i in range(n)
    ]
    return samples[0] if size is None else samples


def field_to_csv(sample: FieldSample, x, path):
    import csv

    v = eval_field(sample.spec, x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "v_d"])
        for xi, vi in zip(np.atleast_1d(x), np.atleast_1d(v)):
            w.writerow([repr(float(xi)), repr(float(vi))])


# -- parameterizations used by scenarios --------------------------------------
#
# A parameterization knows how to draw the surrogate input vector theta, how
# to build the field it encodes, and (for training) the velocity as a torch
# expression of (x, theta).


class _Parameterization:
    name = "base"
    dim = 1
    x_max = 1.0

    def theta_ranges(self):
        raise NotImplementedError

    def draw_theta(self, rng):
        raise NotImplementedError

    def spec(self, theta):
        raise NotImplementedError

    def velocity_torch(self, x, theta):
        raise NotImplementedError

    def velocity_np(self, x, theta):
        return eval_field(self.spec(theta), x)

    def positive_mask(self, thetas, n=1000, chunk=1000):
        """Rows of ``thetas`` whose field is positive on an ``n``-point scan of [0, x_max]."""
        import torch

        thetas = np.atleast_2d(np.asarray(thetas, float))
        x = torch.linspace(0.0, self.x_max, n, dtype=torch.float64)
        out = np.empty(len(thetas), bool)
        for k in range(0, len(thetas), chunk):
            th = torch.as_tensor(thetas[k : k + chunk])
            m = th.shape[0]
            v = self.velocity_torch(x.repeat(m), th.repeat_interleave(n, dim=0))
            out[k : k + m] = (v.reshape(m, n) > 0).all(dim=1).numpy()
        return out

    def theta_at(self, sample: FieldSample, x):
        """Surrogate parameter rows ``(len(x), dim)`` for one realization."""
        x = np.asarray(x, float)
        return np.broadcast_to(np.asarray(sample.theta, float), (x.size, self.dim))

    def sample(self, rng, g, max_tries=10_000) -> FieldSample:
        """Draw until the field is positive on a 10^3-point scan."""
        for _ in range(max_tries):
            theta = np.atleast_1d(np.asarray(self.draw_theta(rng), float))
            spec = self.spec(theta)
            if is_positive(spec, self.x_max) and np.all(eval_field(spec, g.centers) > 0):
                return FieldSample(spec, eval_field(spec, g.centers), theta)
        raise SamplingError(f"{self.name}: no positive field after {max_tries} draws")

    def to_dict(self):
        raise NotImplementedError


def _dist_range(d):
    lo, hi = d.support
    if not (math.isfinite(lo) and math.isfinite(hi)):
        lo = d.mu - 4 * d.sigma if not math.isfinite(lo) else lo
        hi = d.mu + 4 * d.sigma if not math.isfinite(hi) else hi
    return float(lo), float(hi)


@dataclass
class ConstantVelocity(_Parameterization):
    dist: DistributionSpec
    name = "constant"
    dim = 1

    def theta_ranges(self):
        return [_dist_range(self.dist)]

    def draw_theta(self, rng):
        return [sample_scalar(self.dist, rng)]

    def spec(self, theta):
        return Constant(float(theta[0]))

    def velocity_torch(self, x, theta):
        return theta[:, 0]


@dataclass
class AffineVelocity(_Parameterization):
    dist: DistributionSpec
    b: float = 0.5
    name = "affine"
    dim = 1

    def theta_ranges(self):
        return [_dist_range(self.dist)]

    def draw_theta(self, rng):
        return [sample_scalar(self.dist, rng)]

    def spec(self, theta):
        return Affine(float(theta[0]), self.b)

    def velocity_torch(self, x, theta):
        return theta[:, 0] * x + self.b


@dataclass
class PeriodicVelocity(_Parameterization):
    dist: DistributionSpec
    k: float = 1.0
    b: float = 0.5
    name = "periodic"
    dim = 1

    def theta_ranges(self):
        return [_dist_range(self.dist)]

    def draw_theta(self, rng):
        return [sample_scalar(self.dist, rng)]

    def spec(self, theta):
        return Periodic(float(theta[0]), self.k, self.b)

    def velocity_torch(self, x, theta):
        import torch

        return theta[:, 0] * torch.sin(self.k * x) + self.b


@dataclass
class FourierVelocity(_Parameterization):
    dist: DistributionSpec
    n_modes: int = 5
    amplitude: float = 1.0
    b: float = 1.0
    name = "fourier"

    @property
    def dim(self):
        return self.n_modes

    def theta_ranges(self):
        return [_dist_range(self.dist)] * self.n_modes

    def draw_theta(self, rng):
        return sample_scalar(self.dist, rng, size=self.n_modes)

    def spec(self, theta):
        return FourierSeries(tuple(float(t) for t in theta), self.amplitude, self.b)

    def velocity_torch(self, x, theta):
        import torch

        k = torch.arange(1, self.n_modes + 1, dtype=x.dtype)
        modes = torch.sin(2.0 * math.pi * x[:, None] * k[None, :])
        return self.amplitude * (modes * theta).sum(dim=1) + self.b

    def positive_mask(self, thetas, n=1000, chunk=None):
        thetas = np.atleast_2d(np.asarray(thetas, float))
        x = np.linspace(0.0, self.x_max, n)
        modes = np.sin(2.0 * math.pi * np.outer(x, np.arange(1, self.n_modes + 1)))
        return np.all(self.amplitude * modes @ thetas.T + self.b > 0, axis=0)


@dataclass
class LocalNormalVelocity(_Parameterization):
    """Cell-wise independent velocities built from Box-Muller normals.

    The surrogate sees the local velocity as its single parameter, so
    ``theta`` for training is a scalar per collocation point while a
    realization is a gridded field.
    """

    dist: TruncatedNormal
    name = "local-normal"
    dim = 1

    def theta_ranges(self):
        return [_dist_range(self.dist)]

    def _normals(self, rng, n):
        out = np.empty(0)
        drawn = 0
        while out.size < n:
            U = 1.0 - rng.random(2 * n)  # (0, 1]
            V = rng.random(2 * n)
            z = self.dist.mu + self.dist.sigma * box_muller_pair(U, V)
            out = np.concatenate([out, z[(z >= self.dist.low) & (z <= self.dist.up)]])
            drawn += 2 * n
            if drawn > MAX_REJECTION_DRAWS and out.size < n:
                raise SamplingError("local normal velocity: rejection budget exhausted")
        return out[:n]

    def draw_theta(self, rng):
        return self._normals(rng, 1)

    def spec(self, theta):
        return Constant(float(theta[0]))

    def sample(self, rng, g, max_tries=10_000):
        v = self._normals(rng, g.n_cells)
        return FieldSample(Gridded(tuple(v), g.x_max), v, v.copy())

    def theta_at(self, sample, x):
        return np.asarray(eval_field(sample.spec, x), float).reshape(-1, 1)

    def velocity_torch(self, x, theta):
        return theta[:, 0]


@dataclass
class ExpCovVelocity(_Parameterization):
    v_bar: float = 1.0
    sigma_Y2: float = 0.1
    s: float = 2.0
    name = "expcov"
    dim = 0

    def theta_ranges(self):
        return []

    def sample(self, rng, g, max_tries=10_000):
        return sample_expcov_field(self.sigma_Y2, self.s, self.v_bar, g, rng)

    def velocity_torch(self, x, theta):
        raise ParameterError("exponential-covariance fields have no finite parameterization")


@dataclass
class FixedFieldVelocity(_Parameterization):
    """A single known field with no uncertain parameters (``dim == 0``)."""

    field_spec: VelocityFieldSpec = field(default_factory=TanhStairs)
    name = "fixed"
    dim = 0

    def theta_ranges(self):
        return []

    def draw_theta(self, rng):
        return np.empty(0)

    def spec(self, theta):
        return self.field_spec

    def sample(self, rng, g, max_tries=10_000):
        if not is_positive(self.field_spec, g.x_max):
            raise SamplingError(f"{self.field_spec!r} is not positive on the domain")
        return FieldSample(self.field_spec, eval_field(self.field_spec, g.centers), np.empty(0))

    def velocity_torch(self, x, theta):
        import torch

        s = self.field_spec
        if isinstance(s, Constant):
            return torch.full_like(x, float(s.v_d))
        if isinstance(s, TanhStairs):
            return (
                2.0
                - torch.tanh(80.0 * (x - 0.25)) / 4.0
                + torch.tanh(80.0 * (x - 0.5)) / 4.0
                + torch.tanh(80.0 * (x - 0.75)) / 4.0
                + 0.75
            )
        if isinstance(s, HighFreqCosine):
            return 1.5 + torch.cos(100.0 * x)
        if isinstance(s, Affine):
            return s.theta * x + s.b
        if isinstance(s, Periodic):
            return s.theta * torch.sin(s.k * x) + s.b
        raise ParameterError(f"no closed-form torch velocity for {s!r}")
