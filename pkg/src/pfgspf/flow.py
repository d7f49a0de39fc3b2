"""Invertible particle flow (EDH / LEDH) with exact log-Jacobian tracking.

Each pseudo-time step is an affine map

    eta <- eta + eps_l * (A(lam_l) eta + b(lam_l))

with

    A = -1/2 P H^T (lam H P H^T + R)^{-1} H
    b = (I + 2 lam A) [(I + lam A) P H^T R^{-1} (z - e) + A eta_bar0]

where (H, e) linearize h(., 0), P is the predictive covariance and eta_bar0
the predictive mean. The map is invertible and its log-determinant
log det(I + eps A) is accumulated per particle.

With M = lam H P H^T + R the products above simplify to

    b         = 1/2 P H^T M^{-1} [(z - e) + R M^{-1} (z - e - H eta_bar0)]
    A eta + b = 1/2 P H^T M^{-1} [(z - h) + R M^{-1} (z - h + H (eta - eta_bar0))]

which is what the code evaluates. The textbook form multiplies the nearly
singular (I + 2 lam A) into P H^T R^{-1} (z - e); for steep observation
functions the latter is huge and the cancellation destroys the step.
"""

from dataclasses import dataclass
import math
from typing import List, Optional

import numpy as np

from numba import njit

from ._linalg import (
    JITTER,
    _chol_inplace,
    _chol_solve_vec,
    batched_cholesky,
    cho_solve_batched,
    jittered_cholesky,
    logdet_from_cholesky,
    symmetrize,
)
from .errors import InvalidArgument, NumericalFailure
from .ssm import linearize

DEFAULT_N_STEPS = 29
DEFAULT_RATIO = 1.2


@dataclass(frozen=True)
class FlowSchedule:
    lambdas: np.ndarray
    epsilons: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        eps = np.asarray(self.epsilons, dtype=float)
        if lam.shape != eps.shape or lam.ndim != 1 or lam.size == 0:
            raise InvalidArgument("lambdas and epsilons must be equal-length 1-D sequences")
        if np.any(eps <= 0):
            raise InvalidArgument("flow step sizes must be positive")
        if lam[-1] != 1.0 or abs(eps.sum() - 1.0) > 1e-12:
            raise InvalidArgument("pseudo-time schedule must end at 1 with steps summing to 1")

    def __len__(self):
        return len(self.lambdas)

    def __iter__(self):
        return iter(zip(self.lambdas, self.epsilons))

    def refined(self):
        """Schedule with every step split in two equal halves."""
        eps = np.repeat(self.epsilons / 2.0, 2)
        lam = np.cumsum(eps)
        lam[-1] = 1.0
        return FlowSchedule(lam, eps)


def make_schedule(n_steps=DEFAULT_N_STEPS, ratio=DEFAULT_RATIO):
    """Geometric pseudo-time grid with eps_l proportional to ratio**l."""
    if int(n_steps) != n_steps or n_steps < 1:
        raise InvalidArgument(f"n_steps must be a positive integer, got {n_steps}")
    if not ratio > 0 or not np.isfinite(ratio):
        raise InvalidArgument(f"ratio must be positive, got {ratio}")
    n_steps = int(n_steps)
    w = np.ones(n_steps) if ratio == 1.0 else float(ratio) ** np.arange(n_steps)
    eps = w / math.fsum(w)
    lam = np.cumsum(eps)
    lam[-1] = 1.0
    return FlowSchedule(lam, eps)


@dataclass
class FlowStepParams:
    """Affine drift (A, b) of one pseudo-time step (batched over particles for LEDH)."""

    A: np.ndarray
    b: np.ndarray


@dataclass
class FlowResult:
    eta1: np.ndarray
    log_jac_det: np.ndarray
    schedule: FlowSchedule
    steps: Optional[List[FlowStepParams]] = None


def flow_params(H, e, P, R, z, eta0_bar, lam, jitter=JITTER):
    """Flow parameters (A, b) for one particle at pseudo-time ``lam``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    e = np.asarray(e, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(-1)
    eta0_bar = np.asarray(eta0_bar, dtype=float).reshape(-1)
    dz, dx = H.shape
    if P.shape != (dx, dx) or R.shape != (dz, dz) or e.size != dz or z.size != dz:
        raise InvalidArgument("inconsistent shapes in flow_params")
    if eta0_bar.size != dx:
        raise InvalidArgument("predicted mean has the wrong length")
    PHt = P @ H.T
    M = symmetrize(lam * H @ PHt + R)
    try:
        L, _ = jittered_cholesky(M, jitter)
        LR, _ = jittered_cholesky(symmetrize(R), jitter)
    except NumericalFailure as exc:
        raise NumericalFailure(f"flow innovation matrix is singular at lambda={lam}") from exc
    A = -0.5 * PHt @ _cho_solve(L, H)
    innov = z - e
    b = 0.5 * PHt @ _cho_solve(L, innov + R @ _cho_solve(L, innov - H @ eta0_bar))
    return FlowStepParams(A, b)


def _cho_solve(L, rhs):
    from scipy.linalg import cho_solve

    return cho_solve((L, True), rhs, check_finite=False)


def _check_inputs(eta0, pred, z, model):
    eta0 = np.atleast_2d(np.asarray(eta0, dtype=float))
    if eta0.shape[1] != model.dim_x:
        raise InvalidArgument(f"particles have dimension {eta0.shape[1]}, expected {model.dim_x}")
    if not np.all(np.isfinite(eta0)):
        raise NumericalFailure("flow received non-finite particles")
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != model.dim_z:
        raise InvalidArgument(f"observation has length {z.size}, expected {model.dim_z}")
    if pred.dim != model.dim_x:
        raise InvalidArgument("predictive Gaussian has the wrong dimension")
    return eta0, z


def _ledh_chunk(model, eta, P, z, eta_bar0, lam, eps, step, offset, need_A, jitter):
    """One LEDH step for a block of particles. Returns (eta_new, logdet, A, b)."""
    n, dx = eta.shape
    hx = model.observation_mean(eta)
    if model.observation_jacobian_diag is not None:
        hd = model.observation_jacobian_diag(eta)
        if not np.all(np.isfinite(hd)):
            raise NumericalFailure(f"non-finite observation Jacobian at step {step}")

        def Hv(v):
            return hd * v

        def PHt_apply(y):
            return (hd * y) @ P.T

        S = P[None, :, :] * hd[:, None, :]
        S *= hd[:, :, None]
        H_full = None
    else:
        H_full = np.asarray(model.observation_jacobian(eta), dtype=float)
        if not np.all(np.isfinite(H_full)):
            raise NumericalFailure(f"non-finite observation Jacobian at step {step}")

        def Hv(v):
            return np.matmul(H_full, v[:, :, None])[:, :, 0]

        PHt = np.matmul(P, np.swapaxes(H_full, 1, 2))
        S = np.matmul(H_full, PHt)

        def PHt_apply(y):
            return np.matmul(PHt, y[:, :, None])[:, :, 0]

    resid = z - hx  # z - h(eta)
    d2 = resid + Hv(eta - eta_bar0)

    if model.observation_var is not None:
        rv = model.observation_var(eta)
        if not np.all(rv > 0):
            raise NumericalFailure(f"non-positive observation variance at step {step}")
        idx = np.arange(S.shape[1])
        M = lam * S
        M[:, idx, idx] += rv
        Mp = S
        Mp *= lam - 0.5 * eps
        Mp[:, idx, idx] += rv

        def R_apply(y):
            return rv * y
    else:
        R = np.asarray(model.observation_cov(eta), dtype=float)
        M = lam * S + R
        Mp = (lam - 0.5 * eps) * S + R

        def R_apply(y):
            return np.matmul(R, y[:, :, None])[:, :, 0]

    # only the lower triangles are read, so S need not be symmetrized
    L, bad = batched_cholesky(M, jitter)
    Lp, badp = batched_cholesky(Mp, jitter)
    if bad.size or badp.size:
        which = bad[0] if bad.size else badp[0]
        raise NumericalFailure(
            f"flow step matrix not invertible for particle {offset + which} at step {step}"
        )
    logdet = logdet_from_cholesky(Lp) - logdet_from_cholesky(L)

    q = resid + R_apply(cho_solve_batched(L, d2))
    if need_A:
        Y = cho_solve_batched(L, np.stack([q, Hv(eta)], axis=2))
        drift = 0.5 * PHt_apply(Y[:, :, 0])
        b = drift + 0.5 * PHt_apply(Y[:, :, 1])
    else:
        drift = 0.5 * PHt_apply(cho_solve_batched(L, q))
        b = None
    eta_new = eta + eps * drift

    A = None
    if need_A:
        if H_full is None:
            A = -0.5 * P[None] * hd[:, None, :] @ cho_solve_batched(L, hd[:, :, None] * np.eye(dx)[None])
        else:
            A = -0.5 * np.matmul(PHt, cho_solve_batched(L, H_full))
    return eta_new, logdet, A, b


FUSED_MAX_DIM = 48  # above this, batched LAPACK beats the per-particle kernel


@njit(cache=True, nogil=True, fastmath={"reassoc", "contract", "arcp"})
def _ledh_fused(eta, H, hx, R, P, z, eta_bar0, lam, eps):
    """Per-particle LEDH step for small dimensions.

    Returns (eta_new, logdet, ok); ``ok[i]`` is False when a factorization
    failed and the particle must be redone on the jittered path.
    """
    n, dx = eta.shape
    dz = H.shape[1]
    out = np.empty_like(eta)
    logdet = np.zeros(n)
    ok = np.ones(n, dtype=np.bool_)
    PHt = np.empty((dx, dz))
    M = np.empty((dz, dz))
    Mp = np.empty((dz, dz))
    L = np.empty((dz, dz))
    Lp = np.empty((dz, dz))
    d1 = np.empty(dz)
    sz = np.empty(dz)
    wz = np.empty(dz)
    lam_p = lam - 0.5 * eps
    for i in range(n):
        Hi = H[i]
        for a in range(dx):
            for c in range(dz):
                acc = 0.0
                for k in range(dx):
                    acc += P[a, k] * Hi[c, k]
                PHt[a, c] = acc
        for r in range(dz):
            for c in range(r + 1):
                acc = 0.0
                for k in range(dx):
                    acc += Hi[r, k] * PHt[k, c]
                M[r, c] = lam * acc + R[i, r, c]
                Mp[r, c] = lam_p * acc + R[i, r, c]
                M[c, r] = M[r, c]
                Mp[c, r] = Mp[r, c]
        if not (_chol_inplace(M, L) and _chol_inplace(Mp, Lp)):
            ok[i] = False
            continue
        ld = 0.0
        for r in range(dz):
            ld += np.log(Lp[r, r]) - np.log(L[r, r])
        logdet[i] = 2.0 * ld
        # d1 = z - h, d2 = d1 + H (eta - eta_bar0)
        for r in range(dz):
            d1[r] = z[r] - hx[i, r]
            acc = d1[r]
            for k in range(dx):
                acc += Hi[r, k] * (eta[i, k] - eta_bar0[k])
            sz[r] = acc
        _chol_solve_vec(L, sz, wz)
        # q = d1 + R M^{-1} d2, drift = 1/2 P H^T M^{-1} q
        for r in range(dz):
            acc = d1[r]
            for c in range(dz):
                acc += R[i, r, c] * wz[c]
            sz[r] = acc
        _chol_solve_vec(L, sz, wz)
        for a in range(dx):
            acc = 0.0
            for c in range(dz):
                acc += PHt[a, c] * wz[c]
            out[i, a] = eta[i, a] + eps * 0.5 * acc
    return out, logdet, ok


@njit(cache=True, nogil=True, fastmath={"reassoc", "contract", "arcp"})
def _ledh_fused_diag(eta, H, hx, rv, LP, z, eta_bar0, lam, eps):
    """Per-particle LEDH step for diagonal R, in coordinates whitened by P = LP LP^T.

    With G = H LP, W = R^{-1}, B = G^T W G and K = (I + lam B)^{-1}:
    P H^T M^{-1} = LP K G^T W, R M^{-1} = I - lam G K G^T W and
    det(I + eps A) = det(I + (lam - eps/2) B) / det(I + lam B).
    Only dim_x sized systems are factorized.
    """
    n, dx = eta.shape
    dz = H.shape[1]
    out = np.empty_like(eta)
    logdet = np.zeros(n)
    ok = np.ones(n, dtype=np.bool_)
    Gt = np.empty((dx, dz))
    Gs = np.empty((dx, dz))
    B = np.empty((dx, dx))
    Bp = np.empty((dx, dx))
    L = np.empty((dx, dx))
    Lp = np.empty((dx, dx))
    LPt = np.ascontiguousarray(LP.T)
    d1 = np.empty(dz)
    d2 = np.empty(dz)
    wx = np.empty(dx)
    sx = np.empty(dx)
    lam_p = lam - 0.5 * eps
    for i in range(n):
        Hi = H[i]
        # Gt = (H LP)^T and Gs = Gt R^{-1}, stored row-major for the inner products below
        for c in range(dx):
            for r in range(dz):
                acc = 0.0
                for k in range(c, dx):
                    acc += LPt[c, k] * Hi[r, k]
                Gt[c, r] = acc
                Gs[c, r] = acc / rv[i, r]
        for a in range(dx):
            for c in range(a + 1):
                acc = 0.0
                for r in range(dz):
                    acc += Gt[a, r] * Gs[c, r]
                B[a, c] = lam * acc
                Bp[a, c] = lam_p * acc
                B[c, a] = B[a, c]
                Bp[c, a] = Bp[a, c]
            B[a, a] += 1.0
            Bp[a, a] += 1.0
        if not (_chol_inplace(B, L) and _chol_inplace(Bp, Lp)):
            ok[i] = False
            continue
        ld = 0.0
        for a in range(dx):
            ld += np.log(Lp[a, a]) - np.log(L[a, a])
        logdet[i] = 2.0 * ld
        for r in range(dz):
            d1[r] = z[r] - hx[i, r]
            acc = d1[r]
            for k in range(dx):
                acc += Hi[r, k] * (eta[i, k] - eta_bar0[k])
            d2[r] = acc
        # R M^{-1} d2 = d2 - lam G K G^T W d2
        for a in range(dx):
            acc = 0.0
            for r in range(dz):
                acc += Gs[a, r] * d2[r]
            sx[a] = acc
        _chol_solve_vec(L, sx, wx)
        # q = d1 + R M^{-1} d2, reusing d2 for q
        for r in range(dz):
            acc = 0.0
            for a in range(dx):
                acc += Gt[a, r] * wx[a]
            d2[r] = d1[r] + d2[r] - lam * acc
        for a in range(dx):
            acc = 0.0
            for r in range(dz):
                acc += Gs[a, r] * d2[r]
            sx[a] = acc
        _chol_solve_vec(L, sx, wx)
        for a in range(dx):
            acc = 0.0
            for k in range(a + 1):
                acc += LP[a, k] * wx[k]
            out[i, a] = eta[i, a] + eps * 0.5 * acc
    return out, logdet, ok


def _ledh_chunk_fused(model, eta, P, LP, z, eta_bar0, lam, eps, step, offset, jitter):
    n, dx = eta.shape
    hx = np.ascontiguousarray(model.observation_mean(eta), dtype=float)
    if model.observation_jacobian_diag is not None:
        hd = model.observation_jacobian_diag(eta)
        H = hd[:, :, None] * np.eye(dx)[None]
    else:
        H = np.asarray(model.observation_jacobian(eta), dtype=float)
    if not np.all(np.isfinite(H)):
        raise NumericalFailure(f"non-finite observation Jacobian at step {step}")
    eta_c = np.ascontiguousarray(eta)
    H = np.ascontiguousarray(H)
    eb = np.ascontiguousarray(eta_bar0)
    if model.observation_var is not None:
        rv = np.ascontiguousarray(model.observation_var(eta), dtype=float)
        if not np.all(rv > 0):
            raise NumericalFailure(f"non-positive observation variance at step {step}")
        out, logdet, ok = _ledh_fused_diag(eta_c, H, hx, rv, LP, z, eb, float(lam), float(eps))
    else:
        R = np.ascontiguousarray(model.observation_cov(eta), dtype=float)
        out, logdet, ok = _ledh_fused(eta_c, H, hx, R, np.ascontiguousarray(P), z, eb,
                                      float(lam), float(eps))
    if not ok.all():
        redo = np.flatnonzero(~ok)
        o2, l2, _, _ = _ledh_chunk(model, eta[redo], P, z, eta_bar0, lam, eps, step,
                                   offset, False, jitter)
        out[redo] = o2
        logdet[redo] = l2
    return out, logdet


CHUNK_BUDGET = 4_000_000  # float64 entries per (dim_z x dim_z) work array block


def auto_chunk_size(dim_x, dim_z):
    return max(16, CHUNK_BUDGET // (dim_z * dim_z + dim_x * dim_z))


def ledh_flow(model, eta0, pred, z, schedule, retain_steps=False, chunk_size=None,
              jitter=JITTER):
    """Localized flow: every particle is relinearized at its own position.

    ``pred`` is the predictive Gaussian whose covariance and mean serve as P
    and eta_bar0. With ``retain_steps`` the per-particle (A, b) of every step
    are kept so the map can be inverted or differentiated afterwards.
    """
    eta, z = _check_inputs(eta0, pred, z, model)
    n = eta.shape[0]
    if chunk_size is None:
        chunk_size = auto_chunk_size(model.dim_x, model.dim_z)
    P, eta_bar0 = pred.cov, pred.mean
    fused = not retain_steps and max(model.dim_x, model.dim_z) <= FUSED_MAX_DIM
    LP = np.ascontiguousarray(pred.chol) if fused else None
    logdet = np.zeros(n)
    steps = [] if retain_steps else None
    eta = eta.copy()
    for l, (lam, eps) in enumerate(schedule):
        new = np.empty_like(eta)
        if retain_steps:
            A_all = np.empty((n, model.dim_x, model.dim_x))
            b_all = np.empty((n, model.dim_x))
        for start in range(0, n, chunk_size):
            sl = slice(start, min(start + chunk_size, n))
            if fused:
                out, ld = _ledh_chunk_fused(model, eta[sl], P, LP, z, eta_bar0, lam, eps, l,
                                            start, jitter)
                A = b = None
            else:
                out, ld, A, b = _ledh_chunk(
                    model, eta[sl], P, z, eta_bar0, lam, eps, l, start, retain_steps, jitter
                )
            new[sl] = out
            logdet[sl] += ld
            if retain_steps:
                A_all[sl] = A
                b_all[sl] = b
        if not np.all(np.isfinite(new)):
            bad = np.flatnonzero(~np.all(np.isfinite(new), axis=1))[0]
            raise NumericalFailure(f"particle {bad} left the finite range at flow step {l}")
        eta = new
        if retain_steps:
            steps.append(FlowStepParams(A_all, b_all))
    return FlowResult(eta, logdet, schedule, steps)


def edh_flow(model, eta0, pred, z, schedule, retain_steps=False, jitter=JITTER):
    """Global flow: one linearization per step at the flowed predictive mean."""
    eta, z = _check_inputs(eta0, pred, z, model)
    P, eta_bar0 = pred.cov, pred.mean
    mean = eta_bar0.copy()
    total = 0.0
    steps = [] if retain_steps else None
    eye = np.eye(model.dim_x)
    for l, (lam, eps) in enumerate(schedule):
        H, e = linearize(model, mean)
        R = np.asarray(model.observation_cov(mean[None]), dtype=float)[0]
        params = flow_params(H, e, P, R, z, eta_bar0, lam, jitter)
        step = eye + eps * params.A
        sign, ld = np.linalg.slogdet(step)
        if sign <= 0:
            raise NumericalFailure(f"EDH step matrix has non-positive determinant at step {l}")
        total += ld
        eta = eta @ step.T + eps * params.b
        mean = step @ mean + eps * params.b
        if retain_steps:
            steps.append(params)
    if not np.all(np.isfinite(eta)):
        raise NumericalFailure("EDH flow produced non-finite particles")
    return FlowResult(eta, np.full(eta.shape[0], total), schedule, steps)


def _step_arrays(params, n):
    A, b = params.A, params.b
    if A.ndim == 2:
        A = np.broadcast_to(A, (n,) + A.shape)
        b = np.broadcast_to(b, (n,) + b.shape)
    return A, b


def apply_steps(result, eta0):
    """Push ``eta0`` through the retained affine steps of ``result``."""
    if result.steps is None:
        raise InvalidArgument("flow was run without retain_steps")
    eta = np.atleast_2d(np.asarray(eta0, dtype=float)).copy()
    for params, eps in zip(result.steps, result.schedule.epsilons):
        A, b = _step_arrays(params, eta.shape[0])
        eta = eta + eps * (np.matmul(A, eta[:, :, None])[:, :, 0] + b)
    return eta


def invert_flow(result, eta1=None):
    """Undo the retained affine steps in reverse order, recovering eta0."""
    if result.steps is None:
        raise InvalidArgument("flow was run without retain_steps")
    eta = np.atleast_2d(result.eta1 if eta1 is None else eta1).astype(float)
    n, d = eta.shape
    eye = np.eye(d)
    for params, eps in zip(reversed(result.steps), result.schedule.epsilons[::-1]):
        A, b = _step_arrays(params, n)
        rhs = eta - eps * b
        eta = np.linalg.solve(eye + eps * A, rhs[:, :, None])[:, :, 0]
    return eta


def step_log_dets(result):
    """Per-particle sum over steps of log|det(I + eps A)| from retained steps (LU)."""
    if result.steps is None:
        raise InvalidArgument("flow was run without retain_steps")
    n, d = result.eta1.shape
    total = np.zeros(n)
    for params, eps in zip(result.steps, result.schedule.epsilons):
        A, _ = _step_arrays(params, n)
        sign, ld = np.linalg.slogdet(np.eye(d) + eps * A)
        if np.any(sign <= 0):
            raise NumericalFailure("retained flow step has non-positive determinant")
        total += ld
    return total
