"""Fractional-flow physics and the entropy (Welge) hull of the flux."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import ConstructionError, ParameterError

__all__ = [
    "FluidParams",
    "HullModel",
    "fractional_flow",
    "fractional_flow_derivative",
    "fractional_flow_second_derivative",
    "welge_hull",
    "hull_eval",
    "hull_second_derivative",
]


@dataclass(frozen=True)
class FluidParams:
    """Two-phase fluid description entering the transport equation.

    Parameters
    ----------
    S_wc, S_nr : float
        Residual saturations of the wetting and non-wetting phase.
    M : float
        End-point mobility ratio.
    S_inj, S_init : float
        Injected (boundary) and initial saturation.
    """

    S_wc: float = 0.0
    S_nr: float = 0.0
    M: float = 1.0
    S_inj: float = 1.0
    S_init: float = 0.0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ParameterError("invalid FluidParams: " + "; ".join(problems))

    def problems(self):
        out = []
        if not 0.0 <= self.S_wc < 1.0:
            out.append(f"S_wc={self.S_wc} must lie in [0, 1)")
        if not 0.0 <= self.S_nr < 1.0:
            out.append(f"S_nr={self.S_nr} must lie in [0, 1)")
        if not self.S_wc + self.S_nr < 1.0:
            out.append("S_wc + S_nr must be < 1")
        if not self.M > 0.0:
            out.append(f"M={self.M} must be > 0")
        if not self.S_init < self.S_inj:
            out.append(f"S_init={self.S_init} must be < S_inj={self.S_inj}")
        for name in ("S_inj", "S_init"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                out.append(f"{name} must lie in [0, 1]")
        return out

    @property
    def s_min(self) -> float:
        return self.S_wc

    @property
    def s_max(self) -> float:
        return 1.0 - self.S_nr

    def clamp(self, S):
        return np.clip(S, self.s_min, self.s_max)


def _parts(S, p):
    S = p.clamp(np.asarray(S, dtype=float))
    a = S - p.S_wc
    b = np.maximum(1.0 - S - p.S_nr, 0.0)
    den = a * a + b * b / p.M
    return a, b, den


def fractional_flow(S, p: FluidParams):
    """Wetting-phase fractional flow (quadratic Corey form), clamped to the mobile range."""
    a, _, den = _parts(S, p)
    return a * a / den


def fractional_flow_derivative(S, p: FluidParams):
    a, b, den = _parts(S, p)
    c = 1.0 - p.S_wc - p.S_nr
    return 2.0 * c * a * b / (p.M * den * den)


def fractional_flow_second_derivative(S, p: FluidParams):
    a, b, den = _parts(S, p)
    c = 1.0 - p.S_wc - p.S_nr
    dden = 2.0 * a - 2.0 * b / p.M
    return (2.0 * c / p.M) * ((b - a) / den**2 - 2.0 * a * b * dden / den**3)


@dataclass(frozen=True)
class HullModel:
    """Concave envelope of the flux on ``[S_init, S_inj]``.

    Below ``S_BL`` the envelope is the chord from ``(S_init, f_init)`` with
    slope ``sigma``; above it the raw flux is used.
    """

    S_init: float
    S_inj: float
    S_BL: float
    f_init: float
    f_BL: float
    sigma: float
    flux: Optional[Callable] = field(default=None, repr=False, compare=False)
    dflux: Optional[Callable] = field(default=None, repr=False, compare=False)

    @property
    def breakpoints(self):
        return (self.S_init, self.S_BL, self.S_inj)

    def f(self, S, p):
        return self.flux(S) if self.flux is not None else fractional_flow(S, p)

    def df(self, S, p):
        return self.dflux(S) if self.dflux is not None else fractional_flow_derivative(S, p)


def welge_hull(p: FluidParams, flux=None, dflux=None, tol=1e-10) -> HullModel:
    """Tangent (shock) construction from the initial state.

    The tangency point solves ``f'(S)(S - S_init) = f(S) - f(S_init)``; it is
    bracketed in ``[S_init + 1e-6, S_inj]`` and found by bisection.  When the
    chord to ``S_inj`` already dominates the flux (no sign change, e.g. a
    linear flux) the whole interval is a single shock and ``S_BL = S_inj``.

    ``flux``/``dflux`` override the Corey flux (used for testing).
    """
    if (flux is None) != (dflux is None):
        raise ParameterError("flux and dflux must be given together")
    f = flux if flux is not None else (lambda s: fractional_flow(s, p))
    df = dflux if dflux is not None else (lambda s: fractional_flow_derivative(s, p))
    s0 = p.S_init
    f0 = float(f(s0))
    if not float(f(p.S_inj)) > f0:
        raise ConstructionError("flux is not increasing between S_init and S_inj")

    def g(s):
        return float(df(s)) * (s - s0) - (float(f(s)) - f0)

    lo, hi = s0 + 1e-6, p.S_inj
    g_lo, g_hi = g(lo), g(hi)
    if g_lo < 0.0:
        raise ConstructionError(
            "flux is concave at the initial state; no tangent shock exists"
        )
    if g_hi >= 0.0:
        s_bl = hi
    else:
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if g(mid) >= 0.0:
                lo = mid
            else:
                hi = mid
        s_bl = 0.5 * (lo + hi)
    f_bl = float(f(s_bl))
    sigma = (f_bl - f0) / (s_bl - s0)
    if not sigma > 0.0:
        raise ConstructionError(f"non-positive shock speed {sigma}")
    return HullModel(s0, p.S_inj, s_bl, f0, f_bl, sigma, flux, dflux)


def hull_eval(h: HullModel, p: FluidParams, S):
    """Return ``(F, dF/dS)`` of the hull at ``S`` (clamped to ``[S_init, S_inj]``)."""
    S = np.clip(np.asarray(S, dtype=float), h.S_init, h.S_inj)
    chord = S < h.S_BL
    F = np.where(chord, h.f_init + h.sigma * (S - h.S_init), h.f(S, p))
    dF = np.where(chord, h.sigma, h.df(S, p))
    if F.ndim == 0:
        return float(F), float(dF)
    return F, dF


def hull_second_derivative(h: HullModel, p: FluidParams, S):
    S = np.clip(np.asarray(S, dtype=float), h.S_init, h.S_inj)
    return np.where(S < h.S_BL, 0.0, fractional_flow_second_derivative(S, p))
