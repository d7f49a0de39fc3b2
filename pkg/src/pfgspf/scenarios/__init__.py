"""Benchmark scenario builders."""

from .acoustic import AcousticScenarioConfig, build_acoustic, position_indices
from .common import (
    Simulator,
    Trajectory,
    export_trajectory_csv,
    perturbed_prior,
    read_trajectory_csv,
)
from .linear import build_linear_gaussian
from .sensor_net import SensorNetScenarioConfig, build_sensor_net

__all__ = [
    "AcousticScenarioConfig",
    "SensorNetScenarioConfig",
    "Simulator",
    "Trajectory",
    "build_acoustic",
    "build_linear_gaussian",
    "build_sensor_net",
    "export_trajectory_csv",
    "perturbed_prior",
    "position_indices",
    "read_trajectory_csv",
]
