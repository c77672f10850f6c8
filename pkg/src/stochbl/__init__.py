"""Stochastic Buckley-Leverett transport: exact, finite-volume and surrogate solvers
with Monte Carlo uncertainty quantification."""

__version__ = "0.1.0"

from .exceptions import (
    ConfigurationError,
    ConstructionError,
    FitError,
    NumericalError,
    ParameterError,
    SamplingError,
    StochBLError,
    TrainingError,
    ValidationError,
)
from .physics import (
    FluidParams,
    HullModel,
    fractional_flow,
    fractional_flow_derivative,
    hull_eval,
    welge_hull,
)
from .moc import (
    SaturationProfile,
    moc_breakthrough,
    moc_front_radius,
    moc_profile,
    moc_saturation,
    tof_saturation,
)
from .fvm import Grid1D, SpaceTimeField, fvm_solve, godunov_flux, mass_balance
from .uq import EvalGrids, Ensemble, compare, run_ensemble, wasserstein1
from .moments import MomentsConfig, moments_fd_solve, moments_mc, moments_pinn_train

__all__ = [
    "__version__",
    "ConfigurationError",
    "ConstructionError",
    "FitError",
    "NumericalError",
    "ParameterError",
    "SamplingError",
    "StochBLError",
    "TrainingError",
    "ValidationError",
    "FluidParams",
    "HullModel",
    "fractional_flow",
    "fractional_flow_derivative",
    "hull_eval",
    "welge_hull",
    "SaturationProfile",
    "moc_breakthrough",
    "moc_front_radius",
    "moc_profile",
    "moc_saturation",
    "tof_saturation",
    "Grid1D",
    "SpaceTimeField",
    "fvm_solve",
    "godunov_flux",
    "mass_balance",
    "EvalGrids",
    "Ensemble",
    "compare",
    "run_ensemble",
    "wasserstein1",
    "MomentsConfig",
    "moments_fd_solve",
    "moments_mc",
    "moments_pinn_train",
]
