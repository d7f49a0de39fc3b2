"""Particle flow Gaussian sum particle filtering.

The core pieces are the invertible particle flow (:mod:`pfgspf.flow`), the
Gaussian (sum) particle filter family (:mod:`pfgspf.filters`), benchmark
scenarios, evaluation metrics and a campaign harness with a CLI.
"""

from .errors import ConfigError, DegenerateWeights, FilterError, InvalidArgument, NumericalFailure
from .filters import FilterConfig, FilterKind, FilterState, init_state, run_filter
from .flow import edh_flow, ledh_flow, make_schedule
from .gaussmix import Gaussian, GaussianMixture, ParticleCloud, effective_num_gaussians
from .metrics import aggregate, lost_track, mse, omat
from .ssm import StateSpaceModel

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateWeights",
    "FilterConfig",
    "FilterError",
    "FilterKind",
    "FilterState",
    "Gaussian",
    "GaussianMixture",
    "InvalidArgument",
    "NumericalFailure",
    "ParticleCloud",
    "StateSpaceModel",
    "aggregate",
    "edh_flow",
    "effective_num_gaussians",
    "init_state",
    "ledh_flow",
    "lost_track",
    "make_schedule",
    "mse",
    "omat",
    "run_filter",
]
