"""Method-of-characteristics solution of the homogeneous Riemann problem.

The heterogeneous helpers rely on the time-of-flight substitution
``tau(x) = int_0^x ds / v(s)``: in porosity form the transport equation
``S_t + v(x) f'(S) S_x = 0`` becomes the homogeneous problem with unit
velocity in ``tau``, so the same self-similar solution applies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError
from .physics import FluidParams, HullModel, fractional_flow_derivative, welge_hull

__all__ = [
    "SaturationProfile",
    "moc_saturation",
    "moc_profile",
    "moc_front_radius",
    "moc_breakthrough",
    "time_of_flight",
    "tof_saturation",
]


@dataclass
class SaturationProfile:
    x: np.ndarray
    S: np.ndarray
    t: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.S = np.asarray(self.S, dtype=float)
        if self.x.shape != self.S.shape:
            raise ParameterError("x and S must have the same length")
        if self.x.size > 1 and np.any(np.diff(self.x) <= 0):
            raise ParameterError("x must be strictly ascending")


def _invert_derivative(xi, p, h, tol=1e-10):
    """Solve ``f'(S) = xi`` on ``[S_BL, S_inj]`` (where f' decreases) by bisection."""
    lo = np.full(xi.shape, h.S_BL)
    hi = np.full(xi.shape, h.S_inj)
    while np.max(hi - lo, initial=0.0) > tol:
        mid = 0.5 * (lo + hi)
        above = fractional_flow_derivative(mid, p) > xi
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


def _similarity_solution(xi, p, h):
    xi = np.asarray(xi, dtype=float)
    out = np.full(xi.shape, p.S_init)
    d_inj = float(fractional_flow_derivative(p.S_inj, p))
    out[xi <= d_inj] = p.S_inj
    fan = (xi > d_inj) & (xi < h.sigma)
    if np.any(fan):
        out[fan] = _invert_derivative(xi[fan], p, h)
    out[xi == h.sigma] = h.S_BL
    return out


def moc_saturation(p: FluidParams, v_d, x, t, hull: HullModel | None = None):
    """Exact saturation at ``(x, t)`` for a uniform velocity ``v_d`` (broadcasts)."""
    if np.any(np.asarray(v_d) <= 0):
        raise ParameterError("v_d must be positive")
    h = hull if hull is not None else welge_hull(p)
    x, t, v = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(t, dtype=float), np.asarray(v_d, dtype=float)
    )
    if np.any(t < 0) or np.any(x < 0):
        raise ParameterError("x and t must be non-negative")
    out = np.empty(x.shape)
    at_start = t == 0
    out[at_start] = np.where(x[at_start] > 0, p.S_init, p.S_inj)
    live = ~at_start
    out[live] = _similarity_solution(x[live] / (v[live] * t[live]), p, h)
    return out if out.ndim else float(out)


def moc_profile(p, v_d, x, t, hull=None) -> SaturationProfile:
    return SaturationProfile(x, moc_saturation(p, v_d, x, t, hull), t)


def moc_front_radius(p: FluidParams, v_d, t, hull: HullModel | None = None):
    h = hull if hull is not None else welge_hull(p)
    return h.sigma * np.asarray(v_d, dtype=float) * np.asarray(t, dtype=float)


def moc_breakthrough(p: FluidParams, v_d, x, hull: HullModel | None = None):
    h = hull if hull is not None else welge_hull(p)
    return np.asarray(x, dtype=float) / (h.sigma * np.asarray(v_d, dtype=float))


def time_of_flight(velocity, x, n_quad=4096):
    """``int_0^x ds / v(s)`` by composite trapezoid on a fine grid.

    ``velocity`` is a vectorized callable of position; ``x`` must be sorted.
    """
    x = np.asarray(x, dtype=float)
    fine = np.union1d(np.linspace(0.0, float(x.max(initial=0.0)), n_quad), x)
    v = np.asarray(velocity(fine), dtype=float)
    if np.any(v <= 0):
        raise ParameterError("velocity must be positive for time of flight")
    inv = 1.0 / v
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(fine))])
    return np.interp(x, fine, cum)


def tof_saturation(p: FluidParams, velocity, x, t, hull=None, n_quad=4096):
    """Exact porosity-form solution for a spatially varying velocity field."""
    tau = time_of_flight(velocity, x, n_quad)
    return moc_saturation(p, 1.0, tau, t, hull)
