"""Small dense SPD solves (d <= 16) via Cholesky, compiled with numba."""
import math

import numba
import numpy as np


@numba.njit(cache=True)
def cholesky(a):
    """Lower factor L with ``L @ L.T == a``; returns ``(L, ok)``.

    ``ok`` is False when a nonpositive or non-finite pivot shows up.
    """
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0 or not math.isfinite(s):
            return L, False
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            t = a[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
    return L, True


@numba.njit(cache=True)
def forward_sub(L, b):
    n = L.shape[0]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    return y


@numba.njit(cache=True)
def back_sub_t(L, y):
    """Solve ``L.T @ x = y``."""
    n = L.shape[0]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@numba.njit(cache=True)
def cho_solve(L, b):
    return back_sub_t(L, forward_sub(L, b))


@numba.njit(cache=True)
def spd_solve(a, b, ridge):
    """Solve ``a x = b``; on factorization failure retry once with ``a + ridge*I``.

    Returns ``(x, ok)``.
    """
    L, ok = cholesky(a)
    if not ok:
        L, ok = cholesky(a + ridge * np.eye(a.shape[0]))
        if not ok:
            return np.full(b.shape[0], np.nan), False
    return cho_solve(L, b), True


@numba.njit(cache=True)
def inv_quad(a, x, ridge):
    """``x^T a^{-1} x`` through a Cholesky solve; NaN if ``a`` is not SPD."""
    L, ok = cholesky(a)
    if not ok:
        L, ok = cholesky(a + ridge * np.eye(a.shape[0]))
        if not ok:
            return np.nan
    y = forward_sub(L, x)
    s = 0.0
    for v in y:
        s += v * v
    return s
