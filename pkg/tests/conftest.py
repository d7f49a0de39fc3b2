import numpy as np
import pytest

from pfgspf.gaussmix import Gaussian
from pfgspf.ssm import StateSpaceModel


def make_nonlinear_2d(r=0.5, q=0.2):
    """Small 2-D model with a curved observation, used across flow and filter tests."""
    R = np.diag([r, r])
    noise = Gaussian(np.zeros(2), q * np.eye(2))
    F = np.array([[0.9, 0.1], [0.0, 0.8]])

    def obs_mean(x):
        x = np.atleast_2d(x)
        return np.column_stack([0.5 * x[:, 0] ** 2 + x[:, 1], np.sin(x[:, 1]) + 0.3 * x[:, 0]])

    def obs_jac(x):
        x = np.atleast_2d(x)
        J = np.zeros((x.shape[0], 2, 2))
        J[:, 0, 0] = x[:, 0]
        J[:, 0, 1] = 1.0
        J[:, 1, 0] = 0.3
        J[:, 1, 1] = np.cos(x[:, 1])
        return J

    def loglik(z, x):
        d = np.asarray(z) - obs_mean(x)
        return -0.5 * np.sum(d * d, axis=1) / r - np.log(2 * np.pi * r)

    return StateSpaceModel(
        dim_x=2,
        dim_z=2,
        initial=Gaussian(np.array([0.5, -0.2]), np.eye(2)),
        transition=lambda x, v: np.atleast_2d(x) @ F.T + v,
        sample_process_noise=lambda rng, n: noise.sample(n, rng),
        observation_mean=obs_mean,
        observation_jacobian=obs_jac,
        observation_cov=lambda x: np.broadcast_to(R, (np.atleast_2d(x).shape[0], 2, 2)).copy(),
        sample_observation=lambda x, rng: obs_mean(x) + np.sqrt(r) * rng.standard_normal((np.atleast_2d(x).shape[0], 2)),
        log_likelihood=loglik,
        process_cov=q * np.eye(2),
        transition_logpdf=lambda xp, x: noise.logpdf(np.atleast_2d(x) - np.atleast_2d(xp) @ F.T),
        name="nonlinear-2d",
    )


@pytest.fixture
def nonlinear_2d():
    return make_nonlinear_2d()


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    store = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(number, ok, detail):
        store[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        ok, detail = store[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
