"""Aerodynamics-aided inertial odometry for quadrotors."""
from . import aerodynamics, eskf, geometry, sensor_sim
from .aerodynamics import AeroCoefficients, AeroDragRegressor, BodyKinematics
from .eskf import FilterConfig, NavState, run_filter
from .exceptions import AeroIOError
from .sensor_sim import NoiseConfig, SequenceLog, TrajectorySpec, simulate

__version__ = "0.1.0"

__all__ = [
    "AeroCoefficients", "AeroDragRegressor", "AeroIOError", "BodyKinematics", "FilterConfig", "NavState",
    "NoiseConfig", "SequenceLog", "TrajectorySpec", "aerodynamics", "eskf", "geometry", "run_filter",
    "sensor_sim", "simulate",
]
