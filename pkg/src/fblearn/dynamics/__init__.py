"""Plant definitions: control-affine systems with analytic decoupling."""

from .base import (
    Box,
    ControlAffineSystem,
    normal_form_system,
    sample_state,
    scale_parameters,
)
from .double_pendulum import DoublePendulumParams, double_pendulum, pendulum_energy
from .quadrotor import (
    QuadrotorParams,
    ThrustSingularityError,
    hover_state,
    quadrotor_14d,
)

__all__ = [
    "Box",
    "ControlAffineSystem",
    "normal_form_system",
    "sample_state",
    "scale_parameters",
    "DoublePendulumParams",
    "double_pendulum",
    "pendulum_energy",
    "QuadrotorParams",
    "ThrustSingularityError",
    "hover_state",
    "quadrotor_14d",
]
