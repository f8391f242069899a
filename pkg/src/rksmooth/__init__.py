"""Parameterized explicit Runge-Kutta solvers for neural ODE classifiers,
with solver switching, solver smoothing and adversarial evaluation."""

from .errors import RKSmoothError
from .integrate import IntegrationSpec, Trajectory, integrate, integrate_ensemble, rk_step
from .model import ModelConfig, NeuralODEModel, SolverEnsemble
from .tableau import (
    FAMILIES,
    ButcherTableau,
    ParamPoint,
    check_order_conditions,
    get_family,
    make_tableau,
    max_verified_order,
    named_method,
)

__version__ = "0.1.0"

__all__ = [
    "FAMILIES",
    "ButcherTableau",
    "IntegrationSpec",
    "ModelConfig",
    "NeuralODEModel",
    "ParamPoint",
    "RKSmoothError",
    "SolverEnsemble",
    "Trajectory",
    "check_order_conditions",
    "get_family",
    "integrate",
    "integrate_ensemble",
    "make_tableau",
    "max_verified_order",
    "named_method",
    "rk_step",
]
