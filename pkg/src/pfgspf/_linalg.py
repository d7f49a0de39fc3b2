"""Cholesky helpers with a jitter fallback, single and batched."""

import numpy as np
from numba import njit

from .errors import NumericalFailure

JITTER = 1e-9
MAX_DOUBLINGS = 3


def symmetrize(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def jittered_cholesky(a, jitter=JITTER):
    """Lower Cholesky factor of ``a``, adding diagonal jitter if needed.

    Returns ``(L, added)`` where ``added`` is the jitter put on the diagonal
    (0.0 when the plain factorization succeeded).
    """
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise NumericalFailure("matrix to factorize has non-finite entries")
    try:
        return np.linalg.cholesky(a), 0.0
    except np.linalg.LinAlgError:
        pass
    d = a.shape[0]
    trace = np.trace(a) / d
    eps = jitter * (trace if trace > 0 else 1.0)
    eye = np.eye(d)
    for _ in range(MAX_DOUBLINGS + 1):
        try:
            return np.linalg.cholesky(a + eps * eye), eps
        except np.linalg.LinAlgError:
            eps *= 2.0
    raise NumericalFailure(
        f"Cholesky failed after {MAX_DOUBLINGS} jitter doublings (last jitter {eps / 2:.3g})"
    )


def batched_cholesky(a, jitter=JITTER):
    """Cholesky of a stack ``(N, d, d)``; falls back per matrix on failure.

    Returns ``(L, bad)`` with ``bad`` the indices that could not be factorized
    even after jitter (their factor is filled with NaN).
    """
    try:
        return np.linalg.cholesky(a), np.empty(0, dtype=int)
    except np.linalg.LinAlgError:
        pass
    out = np.empty_like(a)
    bad = []
    for i in range(a.shape[0]):
        try:
            out[i] = jittered_cholesky(a[i], jitter)[0]
        except NumericalFailure:
            out[i] = np.nan
            bad.append(i)
    return out, np.asarray(bad, dtype=int)


def logdet_from_cholesky(chol):
    return 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)


@njit(cache=True, nogil=True)
def _cho_solve_batched(chol, rhs):
    n, d, k = rhs.shape
    out = np.empty_like(rhs)
    y = np.empty(d)
    for i in range(n):
        L = chol[i]
        for c in range(k):
            for r in range(d):
                acc = rhs[i, r, c]
                for q in range(r):
                    acc -= L[r, q] * y[q]
                y[r] = acc / L[r, r]
            for r in range(d - 1, -1, -1):
                acc = y[r]
                for q in range(r + 1, d):
                    acc -= L[q, r] * out[i, q, c]
                out[i, r, c] = acc / L[r, r]
    return out


def cho_solve_batched(chol, rhs):
    """Solve ``L L^T x = rhs`` for a stack of factors.

    ``chol`` is ``(N, d, d)``; ``rhs`` is ``(N, d)`` or ``(N, d, k)``.
    """
    chol = np.ascontiguousarray(chol, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if rhs.ndim == 2:
        return _cho_solve_batched(chol, np.ascontiguousarray(rhs[:, :, None]))[:, :, 0]
    return _cho_solve_batched(chol, np.ascontiguousarray(rhs))


@njit(cache=True, nogil=True)
def _chol_inplace(a, L):
    """Lower Cholesky of ``a`` into ``L``; returns False on a non-positive pivot."""
    d = a.shape[0]
    for j in range(d):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, d):
            t = a[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
        for i in range(j):
            L[i, j] = 0.0
    return True


@njit(cache=True, nogil=True)
def _chol_solve_vec(L, rhs, out):
    d = L.shape[0]
    for r in range(d):
        acc = rhs[r]
        for q in range(r):
            acc -= L[r, q] * out[q]
        out[r] = acc / L[r, r]
    for r in range(d - 1, -1, -1):
        acc = out[r]
        for q in range(r + 1, d):
            acc -= L[q, r] * out[q]
        out[r] = acc / L[r, r]
