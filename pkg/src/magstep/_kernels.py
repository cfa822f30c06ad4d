"""Compiled inner loops for symmetric tridiagonal matrices.

All kernels take the diagonal ``d`` and either the off-diagonal ``e`` or its
elementwise square ``e2``.  They release the GIL so callers may run
independent solves on threads.
"""
import numpy as np
from numba import njit

_TINY = 1e-300


@njit(cache=True, nogil=True)
def sturm_count(d, e2, x):
    """Number of eigenvalues strictly below ``x`` (LDL^T inertia count)."""
    n = d.shape[0]
    count = 0
    q = d[0] - x
    if q == 0.0:
        q = -_TINY
    if q < 0.0:
        count += 1
    for i in range(1, n):
        q = d[i] - x - e2[i - 1] / q
        if q == 0.0:
            q = -_TINY
        if q < 0.0:
            count += 1
    return count


@njit(cache=True, nogil=True)
def bisect_eigenvalue(d, e2, j, lo, hi, abstol):
    """Locate the ``j``-th (0-based) eigenvalue inside ``[lo, hi]``."""
    eps = 2.220446049250313e-16
    for _ in range(200):
        width = hi - lo
        scale = max(abs(lo), abs(hi))
        if width <= max(abstol, 2.0 * eps * scale):
            break
        mid = lo + 0.5 * width
        if mid <= lo or mid >= hi:
            break
        if sturm_count(d, e2, mid) > j:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@njit(cache=True, nogil=True)
def shifted_lu(d, e, shift, pivmin):
    """Gaussian elimination with partial pivoting on ``T - shift*I``.

    Returns the upper factor as three diagonals ``(u0, u1, u2)``, the
    multipliers ``mult`` and the row-swap flags ``swap``.
    """
    n = d.shape[0]
    u0 = np.zeros(n)
    u1 = np.zeros(n)
    u2 = np.zeros(n)
    mult = np.zeros(n)
    swap = np.zeros(n, dtype=np.bool_)
    if n == 1:
        a = d[0] - shift
        u0[0] = a if abs(a) > pivmin else pivmin
        return u0, u1, u2, mult, swap
    # current row being eliminated holds (a, b, c) at columns (i, i+1, i+2)
    a = d[0] - shift
    b = e[0]
    c = 0.0
    for i in range(n - 1):
        low = e[i]
        nd = d[i + 1] - shift
        ne = e[i + 1] if i + 1 < n - 1 else 0.0
        if abs(a) >= abs(low) or abs(low) < pivmin:
            if abs(a) < pivmin:
                a = pivmin
            m = low / a
            u0[i] = a
            u1[i] = b
            u2[i] = c
            mult[i] = m
            a = nd - m * b
            b = ne - m * c
            c = 0.0
        else:
            swap[i] = True
            m = a / low
            u0[i] = low
            u1[i] = nd
            u2[i] = ne
            mult[i] = m
            a_new = b - m * nd
            b_new = c - m * ne
            a = a_new
            b = b_new
            c = 0.0
    if abs(a) < pivmin:
        a = pivmin
    u0[n - 1] = a
    return u0, u1, u2, mult, swap


@njit(cache=True, nogil=True)
def shifted_solve(u0, u1, u2, mult, swap, rhs):
    """Solve with the factors produced by :func:`shifted_lu`."""
    n = u0.shape[0]
    y = rhs.copy()
    for i in range(n - 1):
        if swap[i]:
            tmp = y[i]
            y[i] = y[i + 1]
            y[i + 1] = tmp - mult[i] * y[i + 1]
        else:
            y[i + 1] = y[i + 1] - mult[i] * y[i]
    x = np.zeros(n)
    x[n - 1] = y[n - 1] / u0[n - 1]
    if n > 1:
        x[n - 2] = (y[n - 2] - u1[n - 2] * x[n - 1]) / u0[n - 2]
    for i in range(n - 3, -1, -1):
        x[i] = (y[i] - u1[i] * x[i + 1] - u2[i] * x[i + 2]) / u0[i]
    return x


@njit(cache=True, nogil=True)
def twisted_log_vector(d, e, lam):
    """log|x| of the eigenvector for ``lam`` by a twisted LDL^T factorization.

    Forward pivots are used left of the twist index and backward pivots
    right of it.  For the lowest eigenvalue of a matrix with nonzero
    off-diagonal these pivots are positive, so every ratio between
    neighbours is formed without cancellation and the tails keep full
    relative accuracy.  Returns the log magnitudes and the twist index.
    """
    n = d.shape[0]
    fwd = np.empty(n)
    bwd = np.empty(n)
    fwd[0] = d[0] - lam
    for i in range(1, n):
        q = fwd[i - 1]
        if q == 0.0:
            q = _TINY
        fwd[i] = d[i] - lam - e[i - 1] * e[i - 1] / q
    bwd[n - 1] = d[n - 1] - lam
    for i in range(n - 2, -1, -1):
        q = bwd[i + 1]
        if q == 0.0:
            q = _TINY
        bwd[i] = d[i] - lam - e[i] * e[i] / q
    k = 0
    best = np.inf
    for i in range(n):
        g = abs(fwd[i] + bwd[i] - (d[i] - lam))
        if g < best:
            best = g
            k = i
    logx = np.zeros(n)
    for i in range(k - 1, -1, -1):
        logx[i] = logx[i + 1] + np.log(abs(e[i])) - np.log(abs(fwd[i]))
    for i in range(k + 1, n):
        logx[i] = logx[i - 1] + np.log(abs(e[i - 1])) - np.log(abs(bwd[i]))
    return logx, k
