"""Multi-target acoustic tracking with a superposition amplitude sensor model.

Each of M targets moves with a constant-velocity model on state
[x, y, vx, vy]; sensor s at r_s records

    z_s = sum_m psi / (||p_m - r_s|| + d0) + w_s,   w_s ~ N(0, obs_var)

The joint 4M-dimensional state is filtered directly (no data association).
"""

from dataclasses import dataclass
import math

import numpy as np
from numba import njit

from ..errors import InvalidArgument
from ..gaussmix import Gaussian
from ..ssm import StateSpaceModel
from .common import Simulator

DEFAULT_INITIAL_STATES = (
    (12.0, 6.0, 0.001, 0.001),
    (32.0, 32.0, -0.001, -0.005),
    (20.0, 13.0, -0.1, 0.01),
    (15.0, 35.0, 0.002, 0.002),
)


@dataclass(frozen=True)
class AcousticScenarioConfig:
    n_targets: int = 4
    n_sensors: int = 25
    amplitude: float = 10.0
    d0: float = 0.1
    obs_var: float = 0.01
    dt: float = 1.0
    process_noise_scale: float = 0.005
    horizon: int = 40
    region_size: float = 40.0
    initial_states: tuple = DEFAULT_INITIAL_STATES
    prior_pos_var: float = 10.0
    prior_vel_var: float = 1.0
    prior_jitter_scale: float = 1.0
    confine_to_region: bool = True

    def __post_init__(self):
        if self.n_targets < 1:
            raise InvalidArgument("n_targets must be at least 1")
        side = math.isqrt(self.n_sensors)
        if self.n_sensors < 1 or side * side != self.n_sensors:
            raise InvalidArgument("n_sensors must be a perfect square (grid layout)")
        for name in ("amplitude", "d0", "obs_var", "dt", "process_noise_scale",
                     "region_size", "prior_pos_var", "prior_vel_var"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.horizon < 1:
            raise InvalidArgument("horizon must be positive")
        if self.prior_jitter_scale < 0:
            raise InvalidArgument("prior_jitter_scale must be non-negative")
        init = np.asarray(self.initial_states, dtype=float)
        if init.shape != (self.n_targets, 4):
            raise InvalidArgument(
                f"initial_states must have shape ({self.n_targets}, 4), got {init.shape}"
            )
        object.__setattr__(self, "initial_states", tuple(tuple(map(float, r)) for r in init))

    def sensor_positions(self):
        side = math.isqrt(self.n_sensors)
        g = np.linspace(0.0, self.region_size, side)
        xx, yy = np.meshgrid(g, g, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])


def cv_matrices(dt, q):
    """Constant-velocity transition and discretized white-acceleration noise."""
    F = np.array([[1, 0, dt, 0], [0, 1, 0, dt], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float)
    V = q * np.array(
        [
            [dt**3 / 3, 0, dt**2 / 2, 0],
            [0, dt**3 / 3, 0, dt**2 / 2],
            [dt**2 / 2, 0, dt, 0],
            [0, dt**2 / 2, 0, dt],
        ]
    )
    return F, V


def position_indices(n_targets):
    """Column indices of (x, y) for each target in the joint state, shape (M, 2)."""
    base = 4 * np.arange(n_targets)
    return np.column_stack([base, base + 1])


@njit(cache=True, nogil=True)
def _amplitudes(x, sensors, psi, d0, n_targets):
    n = x.shape[0]
    S = sensors.shape[0]
    out = np.zeros((n, S))
    for i in range(n):
        for m in range(n_targets):
            px = x[i, 4 * m]
            py = x[i, 4 * m + 1]
            for s in range(S):
                dx = px - sensors[s, 0]
                dy = py - sensors[s, 1]
                out[i, s] += psi / (np.sqrt(dx * dx + dy * dy) + d0)
    return out


@njit(cache=True, nogil=True)
def _amplitude_jacobian(x, sensors, psi, d0, n_targets):
    n, dim = x.shape
    S = sensors.shape[0]
    J = np.zeros((n, S, dim))
    for i in range(n):
        for m in range(n_targets):
            px = x[i, 4 * m]
            py = x[i, 4 * m + 1]
            for s in range(S):
                dx = px - sensors[s, 0]
                dy = py - sensors[s, 1]
                dist = np.sqrt(dx * dx + dy * dy)
                if dist > 0.0:
                    coef = -psi / (dist * (dist + d0) ** 2)
                    J[i, s, 4 * m] = coef * dx
                    J[i, s, 4 * m + 1] = coef * dy
    return J


def build_acoustic(config=None):
    """Returns ``(model, simulator)`` for the acoustic tracking scenario."""
    cfg = config or AcousticScenarioConfig()
    M = cfg.n_targets
    dx = 4 * M
    sensors = cfg.sensor_positions()
    S = sensors.shape[0]
    psi, d0, var = cfg.amplitude, cfg.d0, cfg.obs_var
    F1, V1 = cv_matrices(cfg.dt, cfg.process_noise_scale)
    F = np.kron(np.eye(M), F1)
    V = np.kron(np.eye(M), V1)
    LV = np.linalg.cholesky(V)
    proc = Gaussian(np.zeros(dx), V)
    x0 = np.asarray(cfg.initial_states, dtype=float).reshape(-1)
    prior_cov = np.diag(np.tile([cfg.prior_pos_var] * 2 + [cfg.prior_vel_var] * 2, M))
    prior = Gaussian(x0, prior_cov)
    log_norm = -0.5 * S * math.log(2 * math.pi * var)

    def _as_batch(x):
        return np.ascontiguousarray(np.atleast_2d(x), dtype=float)

    def obs_mean(x):
        return _amplitudes(_as_batch(x), sensors, psi, d0, M)

    def obs_jac(x):
        return _amplitude_jacobian(_as_batch(x), sensors, psi, d0, M)

    def obs_cov(x):
        n = np.atleast_2d(x).shape[0]
        return np.broadcast_to(var * np.eye(S), (n, S, S)).copy()

    def obs_var(x):
        return np.full((np.atleast_2d(x).shape[0], S), var)

    def sample_obs(x, rng):
        h = obs_mean(x)
        return h + math.sqrt(var) * rng.standard_normal(h.shape)

    def loglik(z, x):
        r = np.asarray(z) - obs_mean(x)
        return log_norm - 0.5 * np.sum(r * r, axis=1) / var

    def transition(x, v):
        return np.atleast_2d(x) @ F.T + v

    def sample_noise(rng, n):
        return rng.standard_normal((n, dx)) @ LV.T

    def trans_logpdf(x_prev, x):
        return proc.logpdf(np.atleast_2d(x) - np.atleast_2d(x_prev) @ F.T)

    model = StateSpaceModel(
        dim_x=dx,
        dim_z=S,
        initial=prior,
        transition=transition,
        sample_process_noise=sample_noise,
        observation_mean=obs_mean,
        observation_jacobian=obs_jac,
        observation_cov=obs_cov,
        sample_observation=sample_obs,
        log_likelihood=loglik,
        process_cov=V,
        transition_logpdf=trans_logpdf,
        observation_var=obs_var,
        name="acoustic",
    )

    accept = None
    if cfg.confine_to_region:
        idx = position_indices(M).ravel()

        def accept(states):
            pos = states[:, idx]
            return bool(np.all((pos >= 0.0) & (pos <= cfg.region_size)))

    return model, Simulator(model, cfg.horizon, x0=x0, accept=accept)
