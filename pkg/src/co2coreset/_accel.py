"""Hot numeric kernels with a numba path and a pure numpy fallback.

Set ``CO2_DISABLE_NUMBA=1`` before import to force the numpy path (also used
automatically when numba is unavailable). Both paths are importable
explicitly as ``*_numba`` / ``*_numpy`` for parity tests and benchmarks.

The soft-min kernels take the cost transposed, shape (m, n), so the
log-sum-exp runs down contiguous rows.
"""

import os

import numpy as np
from scipy.spatial.distance import cdist

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("CO2_DISABLE_NUMBA", "0").lower() not in ("1", "true", "yes")


# numpy reference path ---------------------------------------------------------


def sqdist_numpy(X, Y):
    return cdist(X, Y, "sqeuclidean")


def softmin_numpy(CT, f, logw, eps):
    """out[i] = -eps * log sum_j exp(logw[j] + (f[j] - CT[j, i]) / eps)."""
    z = (logw + f / eps)[:, None] - CT / eps
    zmax = z.max(axis=0)
    # columns where every weight is zero cannot occur: logw has a finite entry
    z -= zmax
    np.exp(z, out=z)
    return -eps * (zmax + np.log(z.sum(axis=0)))


def self_plan_numpy(C, phi, a, eps):
    return a[:, None] * a[None, :] * np.exp((phi[:, None] + phi[None, :] - C) / eps)


# numba path ------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(nogil=True, cache=True)
    def sqdist_numba(X, Y):
        n, d = X.shape
        m = Y.shape[0]
        out = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                s = 0.0
                for k in range(d):
                    t = X[i, k] - Y[j, k]
                    s += t * t
                out[i, j] = s
        return out

    LOG2E = 1.4426950408889634
    LN2_HI = 6.93147180369123816490e-01
    LN2_LO = 1.90821492927058770002e-10

    @njit(nogil=True, cache=True)
    def _exp_nonpos(x, out, bits):
        # exp for x <= 0 written so LLVM can vectorize it (libm exp is scalar):
        # x = k ln2 + r with |r| <= ln2/2, degree-13 Taylor for e^r, 2^k from bits
        n = x.shape[0]
        for i in range(n):
            v = max(x[i], -708.0)
            k = np.floor(v * LOG2E + 0.5)
            r = (v - k * LN2_HI) - k * LN2_LO
            p = 1.0 / 6227020800.0
            p = p * r + 1.0 / 479001600.0
            p = p * r + 1.0 / 39916800.0
            p = p * r + 1.0 / 3628800.0
            p = p * r + 1.0 / 362880.0
            p = p * r + 1.0 / 40320.0
            p = p * r + 1.0 / 5040.0
            p = p * r + 1.0 / 720.0
            p = p * r + 1.0 / 120.0
            p = p * r + 1.0 / 24.0
            p = p * r + 1.0 / 6.0
            p = p * r + 0.5
            p = p * r + 1.0
            out[i] = p * r + 1.0
            bits[i] = (np.int64(k) + 1023) << 52
        scale = bits.view(np.float64)
        for i in range(n):
            out[i] = out[i] * scale[i] if x[i] >= -708.0 else 0.0

    @njit(nogil=True, cache=True)
    def softmin_numba(CT, f, logw, eps):
        m, n = CT.shape
        inv = 1.0 / eps
        zmax = np.full(n, -np.inf)
        for j in range(m):
            if logw[j] == -np.inf:
                continue
            g = logw[j] + f[j] * inv
            for i in range(n):
                t = g - CT[j, i] * inv
                if t > zmax[i]:
                    zmax[i] = t
        s = np.zeros(n)
        z = np.empty(n)
        e = np.empty(n)
        bits = np.empty(n, np.int64)
        for j in range(m):
            if logw[j] == -np.inf:
                continue
            g = logw[j] + f[j] * inv
            for i in range(n):
                z[i] = g - CT[j, i] * inv - zmax[i]
            _exp_nonpos(z, e, bits)
            for i in range(n):
                s[i] += e[i]
        out = np.empty(n)
        for i in range(n):
            out[i] = -eps * (zmax[i] + np.log(s[i]))
        return out

    @njit(nogil=True, cache=True)
    def self_plan_numba(C, phi, a, eps):
        n = C.shape[0]
        out = np.empty((n, n))
        inv = 1.0 / eps
        for i in range(n):
            for j in range(n):
                out[i, j] = a[i] * a[j] * np.exp((phi[i] + phi[j] - C[i, j]) * inv)
        return out

else:  # pragma: no cover
    sqdist_numba = softmin_numba = self_plan_numba = None


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def sqdist(X, Y):
    X, Y = _c(X), _c(Y)
    if USE_NUMBA:
        return sqdist_numba(X, Y)
    return sqdist_numpy(X, Y)


def softmin(C, f, logw, eps, CT=None):
    """-eps * log sum_j w_j exp((f_j - C_ij) / eps) for every row i of C.

    Pass ``CT`` (C transposed, contiguous) when the caller already has it.
    """
    CT = _c(C.T) if CT is None else CT
    if USE_NUMBA:
        return softmin_numba(CT, _c(f), _c(logw), float(eps))
    return softmin_numpy(CT, f, logw, eps)


def self_plan_matrix(C, phi, a, eps):
    if USE_NUMBA:
        return self_plan_numba(C, _c(phi), _c(a), float(eps))
    return self_plan_numpy(C, phi, a, eps)
