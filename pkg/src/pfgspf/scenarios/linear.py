"""Linear-Gaussian test models (Kalman-filter oracle scenarios)."""

import numpy as np

from ..errors import InvalidArgument
from ..gaussmix import Gaussian
from ..ssm import LinearGaussian, StateSpaceModel
from .common import Simulator


def default_matrices(dim):
    """Defaults: scalar random walk for dim 1, weakly coupled stable system otherwise."""
    if dim == 1:
        one = np.ones((1, 1))
        return one, one.copy(), one.copy(), one.copy()
    F = 0.9 * np.eye(dim) + 0.1 * np.eye(dim, k=1)
    V = 0.5 * np.eye(dim)
    C = np.eye(dim) + 0.5 * np.eye(dim, k=1)
    R = 0.5 * np.eye(dim)
    return F, V, C, R


def build_linear_gaussian(dim=1, horizon=20, F=None, V=None, C=None, R=None,
                          prior_mean=None, prior_cov=None):
    """x_t = F x_{t-1} + v, z_t = C x_t + w with Gaussian noise.

    Returns ``(model, simulator)``.
    """
    if dim < 1 or horizon < 1:
        raise InvalidArgument("dim and horizon must be positive")
    dF, dV, dC, dR = default_matrices(dim)
    F = np.atleast_2d(dF if F is None else np.asarray(F, dtype=float))
    V = np.atleast_2d(dV if V is None else np.asarray(V, dtype=float))
    C = np.atleast_2d(dC if C is None else np.asarray(C, dtype=float))
    R = np.atleast_2d(dR if R is None else np.asarray(R, dtype=float))
    dz = C.shape[0]
    if F.shape != (dim, dim) or V.shape != (dim, dim) or C.shape[1] != dim or R.shape != (dz, dz):
        raise InvalidArgument("linear-Gaussian matrices have inconsistent shapes")
    prior = Gaussian(
        np.zeros(dim) if prior_mean is None else prior_mean,
        np.eye(dim) if prior_cov is None else prior_cov,
    )
    LV = np.linalg.cholesky(V)
    LR = np.linalg.cholesky(R)
    noise = Gaussian(np.zeros(dz), R)
    proc = Gaussian(np.zeros(dim), V)
    r_diag = np.allclose(R, np.diag(np.diag(R)))
    r_var = np.diag(R).copy()

    def transition(x, v):
        return x @ F.T + v

    def sample_noise(rng, n):
        return rng.standard_normal((n, dim)) @ LV.T

    def obs_mean(x):
        return np.atleast_2d(x) @ C.T

    def obs_jac(x):
        return np.broadcast_to(C, (np.atleast_2d(x).shape[0],) + C.shape).copy()

    def obs_cov(x):
        return np.broadcast_to(R, (np.atleast_2d(x).shape[0], dz, dz)).copy()

    def obs_var(x):
        return np.broadcast_to(r_var, (np.atleast_2d(x).shape[0], dz))

    def sample_obs(x, rng):
        x = np.atleast_2d(x)
        return obs_mean(x) + rng.standard_normal((x.shape[0], dz)) @ LR.T

    def loglik(z, x):
        return noise.logpdf(np.asarray(z) - obs_mean(x))

    def trans_logpdf(x_prev, x):
        return proc.logpdf(np.atleast_2d(x) - np.atleast_2d(x_prev) @ F.T)

    model = StateSpaceModel(
        dim_x=dim,
        dim_z=dz,
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
        observation_var=obs_var if r_diag else None,
        linear=LinearGaussian(F, V, C, R),
        name=f"linear-gaussian-{dim}d",
    )
    return model, Simulator(model, horizon)

