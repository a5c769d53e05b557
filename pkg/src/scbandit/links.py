import math

import numba
import numpy as np


def logistic_link(z):
    """Numerically stable ``exp(z) / (1 + exp(z))`` for scalars or arrays."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


@numba.njit(cache=True)
def mu(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@numba.njit(cache=True, inline="always")
def dot(a, b):
    # explicit loop: numba routes np.dot through BLAS, too slow for d ~ 4
    s = 0.0
    for j in range(a.shape[0]):
        s += a[j] * b[j]
    return s
