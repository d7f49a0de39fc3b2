"""Ground-truth simulation and CSV export shared by all scenarios."""

import csv
from dataclasses import dataclass, fields
from typing import Callable, Optional

import numpy as np

from ..errors import InvalidArgument, NumericalFailure
from ..gaussmix import Gaussian


@dataclass
class Trajectory:
    """Simulated truth ``states`` (T+1, dim_x) including x_0, and ``observations`` (T, dim_z)."""

    states: np.ndarray
    observations: np.ndarray

    @property
    def horizon(self):
        return self.observations.shape[0]


@dataclass
class Simulator:
    """Draws truth trajectories and measurements from a model.

    ``x0`` pins the initial state (otherwise it is drawn from the model's
    initial law); ``accept`` can reject whole trajectories, e.g. targets
    leaving the surveillance region.
    """

    model: object
    horizon: int
    x0: Optional[np.ndarray] = None
    accept: Optional[Callable] = None
    max_attempts: int = 1000

    def simulate(self, rng, noise=True):
        for _ in range(self.max_attempts):
            traj = self._draw(rng, noise)
            if self.accept is None or self.accept(traj.states):
                return traj
        raise NumericalFailure(
            f"no acceptable trajectory after {self.max_attempts} attempts"
        )

    def _draw(self, rng, noise):
        m = self.model
        if self.x0 is not None:
            x = np.asarray(self.x0, dtype=float).reshape(1, -1)
        else:
            x = m.initial.sample(1, rng)
        states = [x[0]]
        obs = []
        for _ in range(self.horizon):
            if noise:
                x = m.propagate(x, rng)
                z = m.sample_observation(x, rng)[0]
            else:
                x = m.transition(x, np.zeros_like(x))
                z = m.observation_mean(x)[0]
            states.append(x[0])
            obs.append(z)
        return Trajectory(np.array(states), np.array(obs, dtype=float))


def perturbed_prior(prior, scale, rng):
    """Prior with its mean shifted by ``scale`` times a draw from N(0, cov)."""
    if scale < 0:
        raise InvalidArgument("prior jitter scale must be non-negative")
    if scale == 0:
        return prior
    shift = rng.standard_normal(prior.dim) @ prior.chol.T
    return Gaussian(prior.mean + scale * shift, prior.cov)


def export_trajectory_csv(path, traj):
    """Write one row per time step: t, x_0..x_{n-1}, z_0..z_{m-1}.

    Row t = 0 holds the initial state with empty observation cells.
    """
    dx = traj.states.shape[1]
    dz = traj.observations.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i}" for i in range(dx)] + [f"z{i}" for i in range(dz)])
        for t in range(traj.states.shape[0]):
            z = [""] * dz if t == 0 else [repr(float(v)) for v in traj.observations[t - 1]]
            w.writerow([t] + [repr(float(v)) for v in traj.states[t]] + z)


def read_trajectory_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xs = [i for i, h in enumerate(header) if h.startswith("x")]
    zs = [i for i, h in enumerate(header) if h.startswith("z")]
    states = np.array([[float(r[i]) for i in xs] for r in body])
    obs = np.array([[float(r[i]) for i in zs] for r in body[1:]])
    return Trajectory(states, obs)


def config_to_dict(cfg):
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, tuple):
            v = [list(x) if isinstance(x, tuple) else x for x in v]
        out[f.name] = v
    return out


def config_from_dict(cls, data):
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise InvalidArgument(f"unknown {cls.__name__} field(s): {', '.join(unknown)}")
    return cls(**data)

