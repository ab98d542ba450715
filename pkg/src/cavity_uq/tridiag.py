"""Implicit QL eigensolver for real symmetric tridiagonal matrices.

The kernels are compiled with numba and work on one matrix at a time; the
batch drivers loop over a stack of matrices without holding the GIL.
"""
import math

import numba
import numpy as np

from .errors import NoConvergenceError

MAX_SWEEPS = 60


@numba.njit(cache=True, nogil=True)
def _tql_implicit(d, e, z):
    """Diagonalize T(d, e) in place.

    On entry ``d`` holds the diagonal, ``e[i]`` the entry T[i, i+1] (the last
    element is ignored) and ``z`` the identity (or any orthogonal matrix to be
    accumulated). On exit ``d`` holds the unsorted eigenvalues and column k of
    ``z`` the eigenvector for ``d[k]``. Returns False when a sweep cap is hit.
    """
    n = d.shape[0]
    e[n - 1] = 0.0
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) + dd == dd:
                    break
                m += 1
            if m == l:
                break
            it += 1
            if it > MAX_SWEEPS:
                return False
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = 1.0
            c = 1.0
            p = 0.0
            i = m - 1
            deflated = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    # underflow: split here and restart the sweep
                    d[i + 1] -= p
                    e[m] = 0.0
                    deflated = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                for k in range(n):
                    f = z[k, i + 1]
                    z[k, i + 1] = s * z[k, i] + c * f
                    z[k, i] = c * z[k, i] - s * f
                i -= 1
            if deflated:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return True


@numba.njit(cache=True, nogil=True)
def _eig_one(diag, off, w, v):
    n = diag.shape[0]
    scale = 0.0
    for i in range(n):
        scale = max(scale, abs(diag[i]))
    for i in range(n - 1):
        scale = max(scale, abs(off[i]))
    if scale == 0.0:
        scale = 1.0
    d = np.empty(n)
    e = np.zeros(n)
    z = np.eye(n)
    for i in range(n):
        d[i] = diag[i] / scale
    for i in range(n - 1):
        e[i] = off[i] / scale
    ok = _tql_implicit(d, e, z)
    order = np.argsort(d)
    for k in range(n):
        j = order[k]
        w[k] = d[j] * scale
        # sign convention: largest-magnitude component positive
        big = 0
        for i in range(1, n):
            if abs(z[i, j]) > abs(z[big, j]):
                big = i
        sgn = 1.0 if z[big, j] >= 0.0 else -1.0
        nrm = 0.0
        for i in range(n):
            nrm += z[i, j] * z[i, j]
        nrm = math.sqrt(nrm)
        for i in range(n):
            v[i, k] = sgn * z[i, j] / nrm
    return ok


@numba.njit(cache=True, nogil=True)
def _eig_batch(diag, off, w, top):
    m, n = diag.shape
    v = np.empty((n, n))
    status = np.ones(m, dtype=np.bool_)
    for r in range(m):
        status[r] = _eig_one(diag[r], off[r], w[r], v)
        for i in range(n):
            top[r, i] = v[i, n - 1]
    return status


def eigh_tridiagonal(diag, off):
    """Eigenvalues (ascending) and eigenvectors of one symmetric tridiagonal matrix.

    Raises NoConvergenceError if the QL sweeps exceed their cap.
    """
    diag = np.ascontiguousarray(diag, dtype=float)
    off = np.ascontiguousarray(off, dtype=float)
    n = diag.shape[0]
    if off.shape != (n - 1,):
        raise ValueError(f"off-diagonal must have length {n - 1}, got {off.shape}")
    if not (np.all(np.isfinite(diag)) and np.all(np.isfinite(off))):
        raise NoConvergenceError("non-finite matrix entries")
    w = np.empty(n)
    v = np.empty((n, n))
    if not _eig_one(diag, off, w, v):
        raise NoConvergenceError("implicit QL exceeded iteration cap")
    return w, v


def eigh_tridiagonal_batch(diag, off):
    """Batched solve for a stack of matrices.

    Args:
        diag: (m, n) diagonals.
        off: (m, n-1) off-diagonals.

    Returns:
        (eigenvalues (m, n) ascending, top eigenvectors (m, n), converged (m,) bool)
    """
    diag = np.ascontiguousarray(diag, dtype=float)
    off = np.ascontiguousarray(off, dtype=float)
    m, n = diag.shape
    w = np.empty((m, n))
    top = np.empty((m, n))
    if m == 0:
        return w, top, np.ones(0, dtype=bool)
    status = _eig_batch(diag, off, w, top)
    status &= np.isfinite(w).all(axis=1)
    return w, top, status
