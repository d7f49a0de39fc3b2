"""Nonlinear state-space model container and observation linearization.

All model callables are batched: states arrive as ``(N, dim_x)`` arrays and
outputs carry the same leading particle axis. Randomness only enters through
the ``rng`` arguments, so a model object can be shared freely.

``g_t(., 0)`` is assumed bounded and ``h_t(., 0)`` continuously
differentiable; neither is checked at run time.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .gaussmix import Gaussian


@dataclass(frozen=True)
class LinearGaussian:
    """Matrices of x_t = F x_{t-1} + v, z_t = C x_t + w, v ~ N(0, V), w ~ N(0, R)."""

    F: np.ndarray
    V: np.ndarray
    C: np.ndarray
    R: np.ndarray


@dataclass(frozen=True)
class StateSpaceModel:
    dim_x: int
    dim_z: int
    initial: Gaussian
    transition: Callable  # (x_prev, noise) -> x
    sample_process_noise: Callable  # (rng, n) -> (n, dim_x)
    observation_mean: Callable  # x -> h(x, 0), (N, dim_z)
    observation_jacobian: Callable  # x -> (N, dim_z, dim_x)
    observation_cov: Callable  # x -> (N, dim_z, dim_z)
    sample_observation: Callable  # (x, rng) -> z of shape (dim_z,) per state
    log_likelihood: Callable  # (z, x) -> (N,) log p(z | x)
    process_cov: Optional[np.ndarray] = None
    transition_logpdf: Optional[Callable] = None  # (x_prev, x) -> (N,)
    # Optional structure hints used by the flow's fast paths.
    observation_jacobian_diag: Optional[Callable] = None  # x -> (N, dim_z), dim_z == dim_x
    observation_var: Optional[Callable] = None  # x -> (N, dim_z) diagonal of R(x)
    linear: Optional[LinearGaussian] = None
    name: str = "model"

    def __post_init__(self):
        if self.dim_x < 1 or self.dim_z < 1:
            raise InvalidArgument("state and observation dimensions must be positive")
        if self.initial.dim != self.dim_x:
            raise InvalidArgument("initial law dimension differs from dim_x")
        if self.observation_jacobian_diag is not None and self.dim_x != self.dim_z:
            raise InvalidArgument("a diagonal Jacobian requires dim_z == dim_x")

    def propagate(self, x_prev, rng):
        """Draw x_t given x_{t-1} for every row of ``x_prev``."""
        x_prev = np.atleast_2d(x_prev)
        return self.transition(x_prev, self.sample_process_noise(rng, x_prev.shape[0]))

    def with_initial(self, initial):
        from dataclasses import replace

        return replace(self, initial=initial)


def linearize(model, eta):
    """Observation linearization at one state: h(eta, 0) = H eta + e.

    Returns ``(H, e)`` with ``H`` of shape (dim_z, dim_x).
    """
    eta = np.asarray(eta, dtype=float).reshape(-1)
    if eta.size != model.dim_x:
        raise InvalidArgument(f"state has length {eta.size}, model expects {model.dim_x}")
    if not np.all(np.isfinite(eta)):
        raise InvalidArgument(f"cannot linearize at non-finite state {eta}")
    H = np.asarray(model.observation_jacobian(eta[None]), dtype=float)[0]
    if not np.all(np.isfinite(H)):
        raise NumericalFailure(f"observation Jacobian is not finite at state {eta}")
    e = model.observation_mean(eta[None])[0] - H @ eta
    return H, e


def finite_difference_jacobian(fun, x, step=1e-6):
    """Central-difference Jacobian of a batched function at a single point."""
    x = np.asarray(x, dtype=float).reshape(-1)
    h = step * np.maximum(1.0, np.abs(x))
    pts = np.concatenate([x + np.diag(h), x - np.diag(h)])
    vals = np.asarray(fun(pts), dtype=float)
    n = x.size
    return ((vals[:n] - vals[n:]) / (2.0 * h[:, None])).T


def jacobian_error(model, x, step=1e-6):
    """Largest Jacobian deviation from finite differences, relative to its scale."""
    analytic = model.observation_jacobian(np.atleast_2d(x))[0]
    numeric = finite_difference_jacobian(model.observation_mean, x, step)
    scale = max(np.abs(numeric).max(), 1e-12)
    return np.abs(analytic - numeric).max() / scale
