"""Large spatial sensor network: skewed-t dynamics and Poisson counts.

One state per node of a ``grid_side`` x ``grid_side`` grid:

    x_t = alpha x_{t-1} + u_t,   u = gamma W + sqrt(W) L n,
    W ~ InvGamma(nu/2, nu/2),    n ~ N(0, I),  L L^T = Sigma,
    Sigma_ij = kernel_var * exp(-||r_i - r_j|| / beta) + nugget * delta_ij,
    z_t^s ~ Poisson(m1 * exp(m2 * x_t^s)).

This is a reconstruction of the generalized-hyperbolic skewed-t /
count-measurement family; the constants are defaults, not reference values.
The flow sees a Gaussian surrogate of the count likelihood with
h(x) = m1 exp(m2 x) and R(x) = diag(max(h(x), r_min)); importance weights
use the exact Poisson pmf.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, kve

from ..errors import InvalidArgument
from ..gaussmix import Gaussian
from ..ssm import StateSpaceModel
from .common import Simulator


@dataclass(frozen=True)
class SensorNetScenarioConfig:
    grid_side: int = 12
    alpha: float = 0.9
    kernel_var: float = 1.0
    kernel_length: float = 3.0
    nugget: float = 0.01
    nu: float = 5.0
    gamma: float = 0.3
    m1: float = 1.0
    m2: float = 1.0 / 3.0
    r_min: float = 0.1
    horizon: int = 30
    prior_var_scale: float = 1.0
    prior_jitter_scale: float = 0.0

    def __post_init__(self):
        if self.grid_side < 2:
            raise InvalidArgument("grid_side must be at least 2")
        if not self.nu > 2:
            raise InvalidArgument("nu must exceed 2 (finite noise variance)")
        for name in ("kernel_var", "kernel_length", "m1", "m2", "r_min", "prior_var_scale"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.nugget < 0 or self.prior_jitter_scale < 0:
            raise InvalidArgument("nugget and prior_jitter_scale must be non-negative")
        if self.horizon < 1:
            raise InvalidArgument("horizon must be positive")

    @property
    def dim(self):
        return self.grid_side**2

    def node_positions(self):
        g = np.arange(self.grid_side, dtype=float)
        xx, yy = np.meshgrid(g, g, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def kernel_cov(self):
        pos = self.node_positions()
        d = np.sqrt(np.sum((pos[:, None, :] - pos[None, :, :]) ** 2, axis=-1))
        return self.kernel_var * np.exp(-d / self.kernel_length) + self.nugget * np.eye(len(pos))


def sample_skewed_t(rng, n, gamma, chol, nu):
    """Normal mean-variance mixture draws gamma W + sqrt(W) L n."""
    d = chol.shape[0]
    if math.isinf(nu):
        w = np.ones(n)
    else:
        w = 1.0 / rng.gamma(nu / 2.0, 2.0 / nu, size=n)
    z = rng.standard_normal((n, d)) @ chol.T
    return w[:, None] * gamma + np.sqrt(w)[:, None] * z


def skewed_t_logpdf(u, gamma, chol, nu):
    """Log density of the GH skewed-t draws of :func:`sample_skewed_t`."""
    u = np.atleast_2d(u)
    d = chol.shape[0]
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    su = solve_triangular(chol, u.T, lower=True)
    Q = np.sum(su * su, axis=0)
    if math.isinf(nu):
        g = Gaussian(np.zeros(d), chol @ chol.T)
        return g.logpdf(u - gamma)
    sg = solve_triangular(chol, np.broadcast_to(gamma, (d,)).reshape(d, 1), lower=True)[:, 0]
    rho = float(sg @ sg)
    half = 0.5 * (nu + d)
    if rho < 1e-300:
        return (
            gammaln(half) - gammaln(nu / 2.0) - 0.5 * d * math.log(math.pi * nu)
            - 0.5 * logdet - half * np.log1p(Q / nu)
        )
    arg = np.sqrt((nu + Q) * rho)
    log_c = (1.0 - half) * math.log(2.0) - gammaln(nu / 2.0) - 0.5 * d * math.log(math.pi * nu) - 0.5 * logdet
    log_k = np.log(kve(half, arg)) - arg
    return log_c + log_k + su.T @ sg + half * np.log(arg) - half * np.log1p(Q / nu)


def build_sensor_net(config=None):
    """Returns ``(model, simulator)`` for the spatial sensor network."""
    cfg = config or SensorNetScenarioConfig()
    d = cfg.dim
    Sigma = cfg.kernel_cov()
    try:
        L = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise InvalidArgument("spatial kernel covariance is not positive definite") from exc
    gamma = np.full(d, cfg.gamma)
    alpha, nu, m1, m2, r_min = cfg.alpha, cfg.nu, cfg.m1, cfg.m2, cfg.r_min
    prior = Gaussian(np.zeros(d), cfg.prior_var_scale * Sigma)
    if math.isinf(nu):
        noise_cov = Sigma
    else:
        ew = nu / (nu - 2.0)
        var_w = ew**2 * 2.0 / (nu - 4.0) if nu > 4 else np.inf
        noise_cov = ew * Sigma + var_w * np.outer(gamma, gamma)

    def transition(x, u):
        return alpha * np.atleast_2d(x) + u

    def sample_noise(rng, n):
        return sample_skewed_t(rng, n, gamma, L, nu)

    def rate(x):
        return m1 * np.exp(m2 * np.atleast_2d(x))

    def obs_jac_diag(x):
        return m2 * rate(x)

    def obs_jac(x):
        jd = obs_jac_diag(x)
        return jd[:, :, None] * np.eye(d)[None]

    def obs_var(x):
        return np.maximum(rate(x), r_min)

    def obs_cov(x):
        v = obs_var(x)
        return v[:, :, None] * np.eye(d)[None]

    def sample_obs(x, rng):
        return rng.poisson(rate(x)).astype(float)

    def loglik(z, x):
        z = np.asarray(z, dtype=float)
        lam = rate(x)
        return np.sum(z * np.log(lam) - lam - gammaln(z + 1.0), axis=1)

    def trans_logpdf(x_prev, x):
        return skewed_t_logpdf(np.atleast_2d(x) - alpha * np.atleast_2d(x_prev), gamma, L, nu)

    model = StateSpaceModel(
        dim_x=d,
        dim_z=d,
        initial=prior,
        transition=transition,
        sample_process_noise=sample_noise,
        observation_mean=rate,
        observation_jacobian=obs_jac,
        observation_cov=obs_cov,
        sample_observation=sample_obs,
        log_likelihood=loglik,
        process_cov=noise_cov if np.all(np.isfinite(noise_cov)) else None,
        transition_logpdf=trans_logpdf,
        observation_jacobian_diag=obs_jac_diag,
        observation_var=obs_var,
        name="sensor-net",
    )
    return model, Simulator(model, cfg.horizon)
