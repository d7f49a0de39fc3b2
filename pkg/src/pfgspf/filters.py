"""Filter family: Gaussian (sum) particle filters with and without particle
flow, flow-based particle filters, raw flow filters and two oracles.

Every step function has the signature ``step(state, model, z, config, seed)``
and is a pure function of its arguments: ``seed`` is a
:class:`numpy.random.SeedSequence` from which one independent stream per
mixture component (keyed on the component label) is derived.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
import logging
import math
import time
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from ._linalg import JITTER
from .errors import DegenerateWeights, InvalidArgument
from .flow import edh_flow, ledh_flow, make_schedule
from .gaussmix import (
    Gaussian,
    GaussianMixture,
    ParticleCloud,
    effective_num_gaussians,
    empirical_moments,
    normalize_log_weights,
    state_estimate,
    update_mixture_log_weights,
    weighted_gaussian,
)

log = logging.getLogger(__name__)

_LOG_TINY = math.log(np.finfo(float).tiny)


class FilterKind(str, Enum):
    EDH = "EDH"
    LEDH = "LEDH"
    PFPF_EDH = "PFPF_EDH"
    PFPF_LEDH = "PFPF_LEDH"
    GPF = "GPF"
    GSPF = "GSPF"
    PFGPF = "PFGPF"
    PFGSPF = "PFGSPF"
    KF_ORACLE = "KF_ORACLE"
    BOOTSTRAP_PF = "BOOTSTRAP_PF"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("(", "_").replace(")", "").replace("-", "_")
        key = key.replace(" ", "")
        aliases = {"KF": "KF_ORACLE", "KALMAN": "KF_ORACLE", "BOOTSTRAP": "BOOTSTRAP_PF",
                   "PF": "BOOTSTRAP_PF"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise InvalidArgument(f"unknown filter kind {value!r} (expected one of {valid})")


SUM_KINDS = {FilterKind.GSPF, FilterKind.PFGSPF}
CLOUD_KINDS = {
    FilterKind.EDH,
    FilterKind.LEDH,
    FilterKind.PFPF_EDH,
    FilterKind.PFPF_LEDH,
    FilterKind.BOOTSTRAP_PF,
}


@dataclass(frozen=True)
class FilterConfig:
    """Filter choice and tuning.

    ``particles_per_component`` is N*_p; sum filters use N_p = G * N*_p
    particles in total, all other filters use N_p = N*_p.
    """

    kind: FilterKind = FilterKind.PFGSPF
    n_components: int = 1
    particles_per_component: int = 100
    n_lambda: int = 29
    lambda_ratio: float = 1.2
    resample_threshold: float = 0.5
    jitter: float = JITTER
    seed: int = 0
    chunk_size: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FilterKind.parse(self.kind))
        if self.n_components < 1:
            raise InvalidArgument("n_components (G) must be at least 1")
        if self.n_components > 1 and self.kind not in SUM_KINDS:
            raise InvalidArgument(f"{self.kind.value} is a single-Gaussian filter; G must be 1")
        min_particles = 1 if self.kind in (FilterKind.BOOTSTRAP_PF, FilterKind.KF_ORACLE) else 2
        if self.particles_per_component < min_particles:
            raise InvalidArgument(
                f"particles_per_component must be at least {min_particles} for {self.kind.value}"
            )
        if self.n_lambda < 1 or not self.lambda_ratio > 0:
            raise InvalidArgument("flow schedule needs n_lambda >= 1 and lambda_ratio > 0")
        if not 0 <= self.resample_threshold <= 1:
            raise InvalidArgument("resample_threshold must lie in [0, 1]")
        if not self.jitter > 0 or (self.chunk_size is not None and self.chunk_size < 1):
            raise InvalidArgument("jitter and chunk_size must be positive")

    @property
    def n_particles(self):
        return self.n_components * self.particles_per_component

    def schedule(self):
        return make_schedule(self.n_lambda, self.lambda_ratio)


@dataclass
class FilterState:
    posterior: GaussianMixture
    time_index: int = 0
    cloud: Optional[ParticleCloud] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def estimate(self):
        return state_estimate(self.posterior)

    @property
    def geff(self):
        return effective_num_gaussians(self.posterior.weights)


def as_seed(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def component_rng(seed, label):
    """Independent generator for one mixture component within a step."""
    seed = as_seed(seed)
    child = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + (int(label),))
    return np.random.default_rng(child)


def step_seed(master, t):
    """Seed sequence of time step ``t`` (t = 0 initializes the filter)."""
    master = as_seed(master)
    return np.random.SeedSequence(master.entropy, spawn_key=tuple(master.spawn_key) + (int(t),))


def systematic_resample(weights, rng):
    """Indices drawn by systematic resampling of normalized ``weights``."""
    w = np.asarray(weights, dtype=float)
    n = w.size
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(w)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="right")


def effective_sample_size(log_weights):
    w = np.exp(normalize_log_weights(log_weights))
    return 1.0 / np.sum(w * w)


def init_state(model, config, seed=None):
    """Filter state at t = 0 built from the model's initial law."""
    seed = as_seed(config.seed if seed is None else seed)
    prior = model.initial
    G = config.n_components
    mix = GaussianMixture([prior] * G)
    cloud = None
    if config.kind in CLOUD_KINDS:
        rng = component_rng(step_seed(seed, 0), 0)
        cloud = ParticleCloud.uniform(prior.sample(config.particles_per_component, rng))
    return FilterState(mix, 0, cloud, {"geff": effective_num_gaussians(mix.weights)})


def _check(state, model, z):
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != model.dim_z:
        raise InvalidArgument(f"observation has length {z.size}, model expects {model.dim_z}")
    if state.posterior.dim != model.dim_x:
        raise InvalidArgument("filter state dimension does not match the model")
    return z


def _clean(logw):
    return np.where(np.isnan(logw), -np.inf, logw)


def _gaussian_sum_step(state, model, z, config, seed, use_flow):
    z = _check(state, model, z)
    mix = state.posterior
    n = config.particles_per_component
    schedule = config.schedule() if use_flow else None
    comps, log_sums = [], []
    ess, degenerate, extreme = [], [], 0.0
    for comp, label in zip(mix.components, mix.labels):
        rng = component_rng(seed, label)
        x_prev = comp.sample(n, rng)
        eta0 = model.propagate(x_prev, rng)
        pred = empirical_moments(eta0, config.jitter)
        if use_flow:
            res = ledh_flow(model, eta0, pred, z, schedule, chunk_size=config.chunk_size,
                            jitter=config.jitter)
            eta1 = res.eta1
            ratio = pred.logpdf(eta1) - pred.logpdf(eta0)
            extreme = max(extreme, float(np.max(np.abs(ratio))))
            logw = ratio + model.log_likelihood(z, eta1) + res.log_jac_det
        else:
            eta1 = eta0
            logw = model.log_likelihood(z, eta0)
        logw = _clean(logw)
        total = logsumexp(logw)
        if not np.isfinite(total):
            log.warning("component %d degenerate at t=%d; keeping its prediction",
                        label, state.time_index + 1)
            degenerate.append(label)
            comps.append(pred)
            log_sums.append(-np.inf)
            ess.append(0.0)
            continue
        w = np.exp(logw - total)
        ess.append(float(1.0 / np.sum(w * w)))
        comps.append(weighted_gaussian(eta1, logw, config.jitter))
        log_sums.append(total)
    log_sums = np.array(log_sums)
    finite = np.isfinite(log_sums)
    if not finite.all():
        # relative floor: tiny compared with the best component (all-degenerate keeps alpha)
        ref = log_sums[finite].max() if finite.any() else 0.0
        log_sums[~finite] = ref + _LOG_TINY
    order = np.argsort(mix.labels, kind="stable")
    new_log_w = update_mixture_log_weights(mix.log_weights, log_sums, order)
    posterior = GaussianMixture(comps, log_weights=new_log_w, labels=mix.labels)
    diagnostics = {
        "geff": effective_num_gaussians(posterior.weights),
        "ess": ess,
        "degenerate": degenerate,
        "max_abs_log_gauss_ratio": extreme,
    }
    return FilterState(posterior, state.time_index + 1, None, diagnostics)


def pfgspf_step(state, model, z, config, seed):
    """Bank of particle-flow Gaussian particle filters, one per component."""
    return _gaussian_sum_step(state, model, z, config, as_seed(seed), use_flow=True)


def pfgpf_step(state, model, z, config, seed):
    if state.posterior.n_components != 1:
        raise InvalidArgument("PFGPF operates on a single Gaussian")
    return pfgspf_step(state, model, z, config, seed)


def gspf_step(state, model, z, config, seed):
    """Gaussian sum particle filter with the dynamic prior as proposal."""
    return _gaussian_sum_step(state, model, z, config, as_seed(seed), use_flow=False)


def gpf_step(state, model, z, config, seed):
    if state.posterior.n_components != 1:
        raise InvalidArgument("GPF operates on a single Gaussian")
    return gspf_step(state, model, z, config, seed)


def _cloud_flow_step(state, model, z, config, seed, flow, weighted):
    z = _check(state, model, z)
    cloud = state.cloud
    if cloud is None:
        raise InvalidArgument(f"{config.kind.value} needs a particle cloud in its state")
    if weighted and model.transition_logpdf is None:
        raise InvalidArgument("particle flow particle filters need the transition density")
    rng = component_rng(as_seed(seed), 0)
    x_prev = cloud.particles
    eta0 = model.propagate(x_prev, rng)
    if weighted:
        pred = weighted_gaussian(eta0, cloud.log_weights, config.jitter)
    else:
        pred = empirical_moments(eta0, config.jitter)
    if flow == "edh":
        res = edh_flow(model, eta0, pred, z, config.schedule(), jitter=config.jitter)
    else:
        res = ledh_flow(model, eta0, pred, z, config.schedule(), chunk_size=config.chunk_size,
                        jitter=config.jitter)
    eta1 = res.eta1
    n = eta1.shape[0]
    diagnostics = {"geff": 1.0, "resampled": False, "degenerate": []}
    if not weighted:
        posterior = empirical_moments(eta1, config.jitter)
        new_cloud = ParticleCloud.uniform(eta1)
        diagnostics["ess"] = [float(n)]
    else:
        logw = _clean(
            cloud.log_weights
            + model.transition_logpdf(x_prev, eta1)
            + model.log_likelihood(z, eta1)
            + res.log_jac_det
            - model.transition_logpdf(x_prev, eta0)
        )
        try:
            logw = normalize_log_weights(logw)
        except DegenerateWeights:
            log.warning("all PFPF weights vanished at t=%d; resetting to uniform",
                        state.time_index + 1)
            diagnostics["degenerate"] = [0]
            logw = np.full(n, -math.log(n))
        posterior = weighted_gaussian(eta1, logw, config.jitter)
        w = np.exp(logw)
        ess = float(1.0 / np.sum(w * w))
        diagnostics["ess"] = [ess]
        if ess < config.resample_threshold * n:
            idx = systematic_resample(w, rng)
            eta1 = eta1[idx]
            logw = np.full(n, -math.log(n))
            diagnostics["resampled"] = True
        new_cloud = ParticleCloud(eta1, logw)
    return FilterState(GaussianMixture([posterior]), state.time_index + 1, new_cloud, diagnostics)


def pfpf_step(state, model, z, config, seed, flow="ledh"):
    """Particle filter with an invertible-flow proposal (weighted, resampled)."""
    return _cloud_flow_step(state, model, z, config, seed, flow, weighted=True)


def pfpf_edh_step(state, model, z, config, seed):
    return pfpf_step(state, model, z, config, seed, flow="edh")


def pfpf_ledh_step(state, model, z, config, seed):
    return pfpf_step(state, model, z, config, seed, flow="ledh")


def edh_step(state, model, z, config, seed):
    """Raw EDH filter: flow with uniform weights and no correction."""
    return _cloud_flow_step(state, model, z, config, seed, "edh", weighted=False)


def ledh_step(state, model, z, config, seed):
    return _cloud_flow_step(state, model, z, config, seed, "ledh", weighted=False)


def bootstrap_pf_step(state, model, z, config, seed):
    """Bootstrap particle filter resampling systematically at every step."""
    z = _check(state, model, z)
    cloud = state.cloud
    if cloud is None:
        raise InvalidArgument("bootstrap PF needs a particle cloud in its state")
    rng = component_rng(as_seed(seed), 0)
    x = model.propagate(cloud.particles, rng)
    logw = _clean(cloud.log_weights + model.log_likelihood(z, x))
    degenerate = []
    try:
        logw = normalize_log_weights(logw)
    except DegenerateWeights:
        degenerate = [0]
        logw = np.full(x.shape[0], -math.log(x.shape[0]))
    posterior = weighted_gaussian(x, logw, config.jitter)
    w = np.exp(logw)
    ess = float(1.0 / np.sum(w * w))
    idx = systematic_resample(w, rng)
    new_cloud = ParticleCloud.uniform(x[idx])
    diagnostics = {"geff": 1.0, "ess": [ess], "resampled": True, "degenerate": degenerate}
    return FilterState(GaussianMixture([posterior]), state.time_index + 1, new_cloud, diagnostics)


def kalman_step(state, model, z, config=None, seed=None):
    """Exact Kalman filter step; only valid for linear-Gaussian models."""
    lin = model.linear
    if lin is None:
        raise InvalidArgument("the Kalman oracle requires a linear-Gaussian model")
    z = _check(state, model, z)
    prior = state.posterior.components[0]
    m = lin.F @ prior.mean
    P = lin.F @ prior.cov @ lin.F.T + lin.V
    S = lin.C @ P @ lin.C.T + lin.R
    K = np.linalg.solve(S, lin.C @ P).T
    mean = m + K @ (z - lin.C @ m)
    IKC = np.eye(model.dim_x) - K @ lin.C
    cov = IKC @ P @ IKC.T + K @ lin.R @ K.T
    post = Gaussian(mean, cov)
    return FilterState(GaussianMixture([post]), state.time_index + 1, None,
                       {"geff": 1.0, "gain": K})


STEP_FUNCTIONS = {
    FilterKind.EDH: edh_step,
    FilterKind.LEDH: ledh_step,
    FilterKind.PFPF_EDH: pfpf_edh_step,
    FilterKind.PFPF_LEDH: pfpf_ledh_step,
    FilterKind.GPF: gpf_step,
    FilterKind.GSPF: gspf_step,
    FilterKind.PFGPF: pfgpf_step,
    FilterKind.PFGSPF: pfgspf_step,
    FilterKind.KF_ORACLE: kalman_step,
    FilterKind.BOOTSTRAP_PF: bootstrap_pf_step,
}


@dataclass
class FilterRun:
    estimates: np.ndarray  # (T, dim_x)
    geff: np.ndarray  # (T,)
    step_times: np.ndarray  # (T,) seconds
    states: Optional[list] = None


def run_filter(model, observations, config, seed=None, keep_states=False):
    """Filter a whole observation sequence; returns per-step estimates and G_eff."""
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    master = as_seed(config.seed if seed is None else seed)
    step = STEP_FUNCTIONS[config.kind]
    state = init_state(model, config, master)
    estimates, geff, times = [], [], []
    states = [state] if keep_states else None
    for t, z in enumerate(obs, start=1):
        start = time.perf_counter()
        state = step(state, model, z, config, step_seed(master, t))
        times.append(time.perf_counter() - start)
        estimates.append(state.estimate)
        geff.append(state.diagnostics.get("geff", state.geff))
        if keep_states:
            states.append(state)
    return FilterRun(np.array(estimates), np.array(geff), np.array(times), states)


def with_kind(config, kind, **changes):
    return replace(config, kind=FilterKind.parse(kind), **changes)
