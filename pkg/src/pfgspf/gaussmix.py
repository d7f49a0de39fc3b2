"""Gaussians, Gaussian mixtures and weighted particle clouds.

Weights are carried in the log domain throughout; normalization subtracts
the maximum before exponentiating so that 100+ dimensional likelihood
ratios do not underflow.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from ._linalg import JITTER, jittered_cholesky, symmetrize
from .errors import DegenerateWeights, InvalidArgument, NumericalFailure

_LOG_2PI = math.log(2.0 * math.pi)


class Gaussian:
    """Multivariate normal N(mean, cov) with a cached lower Cholesky factor.

    The covariance is symmetrized on construction. If it is not numerically
    positive definite, diagonal jitter is added (see ``jitter_added``).
    """

    __slots__ = ("mean", "cov", "chol", "jitter_added")

    def __init__(self, mean, cov, jitter=JITTER):
        mean = np.array(mean, dtype=float).reshape(-1)
        cov = np.array(cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.shape != (mean.size, mean.size):
            raise InvalidArgument(
                f"covariance shape {cov.shape} does not match mean length {mean.size}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NumericalFailure("Gaussian parameters contain non-finite values")
        cov = symmetrize(cov)
        chol, added = jittered_cholesky(cov, jitter)
        if added:
            cov = cov + added * np.eye(mean.size)
        self.mean = mean
        self.cov = cov
        self.chol = chol
        self.jitter_added = added

    @property
    def dim(self):
        return self.mean.size

    def logpdf(self, x):
        """Log density at ``x`` of shape ``(d,)`` or ``(N, d)``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        diff = np.atleast_2d(x) - self.mean
        sol = solve_triangular(self.chol, diff.T, lower=True, check_finite=False)
        maha = np.einsum("ij,ij->j", sol, sol)
        logdet = 2.0 * np.sum(np.log(np.diag(self.chol)))
        out = -0.5 * (maha + logdet + self.dim * _LOG_2PI)
        return out[0] if single else out

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self.chol.T

    def __repr__(self):
        return f"Gaussian(dim={self.dim}, jitter_added={self.jitter_added:g})"


class GaussianMixture:
    """Weighted sum of Gaussians.

    ``labels`` give each component a stable identity independent of its
    position in the list; per-component random streams and the canonical
    summation order in the weight update are keyed on them.
    """

    def __init__(self, components, weights=None, labels=None, log_weights=None):
        components = list(components)
        if not components:
            raise InvalidArgument("a mixture needs at least one component")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise InvalidArgument(f"components have different dimensions {sorted(dims)}")
        G = len(components)
        if log_weights is None:
            if weights is None:
                weights = np.full(G, 1.0 / G)
            weights = np.asarray(weights, dtype=float).reshape(-1)
            if weights.size != G:
                raise InvalidArgument(f"{weights.size} weights for {G} components")
            if np.any(weights < 0) or not np.all(np.isfinite(weights)):
                raise InvalidArgument("mixture weights must be finite and non-negative")
            with np.errstate(divide="ignore"):
                log_weights = np.log(weights)
        log_weights = np.asarray(log_weights, dtype=float).reshape(-1)
        if log_weights.size != G:
            raise InvalidArgument(f"{log_weights.size} weights for {G} components")
        if labels is None:
            labels = tuple(range(G))
        labels = tuple(int(lab) for lab in labels)
        if len(labels) != G or len(set(labels)) != G:
            raise InvalidArgument("mixture labels must be unique, one per component")
        self.components = components
        self.labels = labels
        self.log_weights = normalize_log_weights(log_weights)
        self.weights = np.exp(self.log_weights)

    @property
    def n_components(self):
        return len(self.components)

    @property
    def dim(self):
        return self.components[0].dim

    def mean(self):
        return state_estimate(self)

    def permuted(self, order):
        order = list(order)
        return GaussianMixture(
            [self.components[k] for k in order],
            log_weights=self.log_weights[order],
            labels=[self.labels[k] for k in order],
        )

    def __repr__(self):
        return f"GaussianMixture(G={self.n_components}, dim={self.dim})"


@dataclass
class ParticleCloud:
    """Particles with log-weights, each tagged with its mixture component."""

    particles: np.ndarray
    log_weights: np.ndarray
    component_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        n = self.particles.shape[0]
        self.log_weights = np.asarray(self.log_weights, dtype=float).reshape(-1)
        if self.log_weights.size != n:
            raise InvalidArgument(f"{self.log_weights.size} log-weights for {n} particles")
        if self.component_ids is None:
            self.component_ids = np.zeros(n, dtype=int)
        self.component_ids = np.asarray(self.component_ids, dtype=int).reshape(-1)
        if self.component_ids.size != n:
            raise InvalidArgument("component_ids length differs from particle count")
        if not np.all(np.isfinite(self.particles)):
            raise NumericalFailure("particle cloud contains non-finite entries")

    @classmethod
    def uniform(cls, particles, component_ids=None):
        n = np.atleast_2d(particles).shape[0]
        return cls(particles, np.full(n, -math.log(n)), component_ids)

    @property
    def n(self):
        return self.particles.shape[0]

    def normalized(self):
        return ParticleCloud(
            self.particles, normalize_log_weights(self.log_weights), self.component_ids
        )

    @property
    def weights(self):
        return np.exp(normalize_log_weights(self.log_weights))


def normalize_log_weights(log_weights):
    """Shift log-weights so that their exponentials sum to one."""
    log_weights = np.asarray(log_weights, dtype=float)
    total = logsumexp(log_weights)
    if not np.isfinite(total):
        raise DegenerateWeights("all weights are zero (or non-finite)")
    return log_weights - total


def empirical_moments(particles, jitter=JITTER):
    """Sample mean and 1/N covariance of ``particles`` (N, d) as a Gaussian."""
    x = np.atleast_2d(np.asarray(particles, dtype=float))
    if x.shape[0] < 2:
        raise InvalidArgument(f"empirical moments need at least 2 particles, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NumericalFailure("non-finite particles in empirical_moments")
    mean = x.mean(axis=0)
    diff = x - mean
    cov = diff.T @ diff / x.shape[0]
    return Gaussian(mean, cov, jitter)


def weighted_gaussian(particles, log_weights, jitter=JITTER):
    """Weighted mean and covariance with self-normalized weights."""
    x = np.atleast_2d(np.asarray(particles, dtype=float))
    w = np.exp(normalize_log_weights(log_weights))
    mean = w @ x
    diff = x - mean
    cov = (diff.T * w) @ diff
    return Gaussian(mean, cov, jitter)


def weighted_moments(cloud, component=0, jitter=JITTER):
    """Weighted moments of the particles of one mixture component."""
    mask = cloud.component_ids == component
    if not np.any(mask):
        raise InvalidArgument(f"cloud holds no particles of component {component}")
    try:
        return weighted_gaussian(cloud.particles[mask], cloud.log_weights[mask], jitter)
    except DegenerateWeights as exc:
        raise DegenerateWeights(
            f"all weights of component {component} are zero", component=component
        ) from exc


def update_mixture_log_weights(log_prev, log_sums, order=None):
    """Log-domain mixing-proportion update.

    ``log_sums[j]`` is the log of the summed unnormalized weights of
    component j. ``order`` fixes the summation order of the normalizers.
    """
    log_prev = np.asarray(log_prev, dtype=float)
    log_sums = np.asarray(log_sums, dtype=float)
    if log_prev.shape != log_sums.shape:
        raise InvalidArgument("previous weights and component sums differ in length")
    if np.any(np.isnan(log_sums)) or np.any(log_sums == np.inf):
        raise NumericalFailure("component weight sums are not finite")
    if order is None:
        order = np.arange(log_sums.size)
    order = np.asarray(order)
    total = logsumexp(log_sums[order])
    if not np.isfinite(total):
        raise DegenerateWeights("all component weight sums are zero")
    tilde = log_prev + (log_sums - total)
    norm = logsumexp(tilde[order])
    if not np.isfinite(norm):
        raise DegenerateWeights("updated mixing proportions are all zero")
    return tilde - norm


def update_mixture_weights(prev, component_weight_sums):
    """Mixing proportions proportional to prev[j] * sums[j] / sum(sums), normalized."""
    prev = np.asarray(prev, dtype=float)
    sums = np.asarray(component_weight_sums, dtype=float)
    if np.any(sums < 0):
        raise InvalidArgument("component weight sums must be non-negative")
    if np.any(prev < 0) or not np.isclose(prev.sum(), 1.0, atol=1e-9):
        raise InvalidArgument("previous mixing proportions must be a probability vector")
    with np.errstate(divide="ignore"):
        out = update_mixture_log_weights(np.log(prev), np.log(sums))
    return np.exp(out)


def effective_num_gaussians(weights):
    """Inverse participation ratio 1 / sum(alpha^2) of mixing proportions.

    Evaluated as (sum r)^2 / sum r^2 with r = alpha / max(alpha), which is
    the same quantity but exact at both ends (one-hot and uniform).
    """
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)) or w.max() <= 0:
        raise InvalidArgument("G_eff needs a non-empty, non-negative weight vector")
    r = w / w.max()
    s1 = math.fsum(r)
    s2 = math.fsum(r * r)
    return min(max(s1 * s1 / s2, 1.0), float(w.size))


def sample(dist, n, rng):
    """Draw from a Gaussian, or ``n`` per component from a mixture.

    Mixture draws are stacked component by component (``n * G`` rows).
    """
    if n < 1:
        raise InvalidArgument("sample count must be at least 1")
    if isinstance(dist, GaussianMixture):
        return np.vstack([c.sample(n, rng) for c in dist.components])
    return dist.sample(n, rng)


def state_estimate(mixture):
    """Mixture mean: sum_j alpha_j mu_j."""
    means = np.stack([c.mean for c in mixture.components])
    return mixture.weights @ means
