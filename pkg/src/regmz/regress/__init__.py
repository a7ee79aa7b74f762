"""Regression as projection: parametric families fitted by least squares."""

from .families import (
    Conv1d,
    Linear,
    Mlp,
    Polynomial,
    SplineRidge,
    TrainerConfig,
    family_from_dict,
    family_to_dict,
    spline_features,
    spline_knots,
)
from .fitting import (
    ClosedFormSolver,
    FittedModel,
    TrainingDiverged,
    fit,
    gradient_check,
    idempotence_residual,
    load_model,
    mse,
    predict,
    save_model,
    with_trainer,
)

__all__ = [
    "Conv1d", "Linear", "Mlp", "Polynomial", "SplineRidge", "TrainerConfig",
    "family_from_dict", "family_to_dict", "spline_features", "spline_knots",
    "ClosedFormSolver", "FittedModel", "TrainingDiverged", "fit", "gradient_check",
    "idempotence_residual", "load_model", "mse", "predict", "save_model", "with_trainer",
]
