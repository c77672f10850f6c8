"""Parameterized physics-informed surrogate."""

from .estimators import (
    HullCorrelation,
    ParameterizedPINN,
    VelocityNet,
    detect_shock,
    fit_hull_correlation,
    fit_velocity_net,
)
from .network import InputNormalizer, Jet, SurrogateModel
from .training import (
    FieldContext,
    FourierConfig,
    LossTerms,
    SampleBatch,
    TrainingConfig,
    TrainResult,
    build_model,
    draw_samples,
    flux_derivative_torch,
    flux_torch,
    hull_derivative_torch,
    infer_profile,
    loss_terms,
    total_loss,
    train,
)

__all__ = [
    "HullCorrelation",
    "ParameterizedPINN",
    "VelocityNet",
    "detect_shock",
    "fit_hull_correlation",
    "fit_velocity_net",
    "InputNormalizer",
    "Jet",
    "SurrogateModel",
    "FieldContext",
    "FourierConfig",
    "LossTerms",
    "SampleBatch",
    "TrainingConfig",
    "TrainResult",
    "build_model",
    "draw_samples",
    "flux_derivative_torch",
    "flux_torch",
    "hull_derivative_torch",
    "infer_profile",
    "loss_terms",
    "total_loss",
    "train",
]
