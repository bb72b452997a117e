# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-bin kernels: tail-stable log normal CDF, the lifted-max
joint log-density, and the CACG quadratic-form / scatter accumulations.

Mirrors facsep._kernels._py; selected at import time by the package
__init__ when available.
"""

import numpy as np

from libc.math cimport erfc, exp, log, log1p, sqrt, M_PI

cdef double _SQRT1_2 = 1.0 / sqrt(2.0)
cdef double _LOG_2PI = log(2.0 * M_PI)

# Odd double factorials (2k-1)!! for the Mills-ratio tail series.
cdef double[8] _DFACT
_DFACT[0] = 1.0
_DFACT[1] = 3.0
_DFACT[2] = 15.0
_DFACT[3] = 105.0
_DFACT[4] = 945.0
_DFACT[5] = 10395.0
_DFACT[6] = 135135.0
_DFACT[7] = 2027025.0


cdef inline double _ndtr(double x) noexcept nogil:
    return 0.5 * erfc(-x * _SQRT1_2)


cdef double _log_ndtr(double x) noexcept nogil:
    cdef double s, inv_x2, term
    cdef int k
    if x > 6.0:
        # Phi(x) ~ 1; log1p keeps precision in the upper tail.
        return log1p(-_ndtr(-x))
    if x > -14.0:
        return log(_ndtr(x))
    # Deep lower tail: Mills-ratio asymptotic expansion, finite for any
    # finite x (erfc underflows near -37.5 sigma).
    s = 0.0
    inv_x2 = 1.0 / (x * x)
    term = inv_x2
    for k in range(8):
        if k % 2 == 0:
            s -= _DFACT[k] * term
        else:
            s += _DFACT[k] * term
        term *= inv_x2
    return -0.5 * x * x - log(-x) - 0.5 * _LOG_2PI + log1p(s)


def log_ndtr(x):
    """Log of the standard normal CDF, finite for any finite argument."""
    cdef double[::1] flat
    cdef Py_ssize_t i, n
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    flat = arr.ravel()
    cdef double[::1] oflat = out.ravel()
    n = flat.shape[0]
    with nogil:
        for i in range(n):
            oflat[i] = _log_ndtr(flat[i])
    return out


def lifted_max_logpdf(y, mu, sigma):
    """See facsep._kernels._py.lifted_max_logpdf; fused single pass."""
    cdef double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[:, :, ::1] muv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[:, :, ::1] sgv = np.ascontiguousarray(sigma, dtype=np.float64)
    cdef Py_ssize_t K = muv.shape[0], T = muv.shape[1], F = muv.shape[2]
    if yv.shape[0] != T or yv.shape[1] != F:
        raise ValueError("y shape does not match mu/sigma")
    out_arr = np.empty((K, T, F), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t k, t, f
    cdef double a, lphi, total, yv_tf
    with nogil:
        for t in range(T):
            for f in range(F):
                yv_tf = yv[t, f]
                total = 0.0
                for k in range(K):
                    a = (yv_tf - muv[k, t, f]) / sgv[k, t, f]
                    lphi = _log_ndtr(a)
                    total += lphi
                    # Stash log N - log Phi; the shared Phi-sum is added below.
                    out[k, t, f] = (-0.5 * a * a - log(sgv[k, t, f])
                                    - 0.5 * _LOG_2PI) - lphi
                for k in range(K):
                    out[k, t, f] += total
    return out_arr


def cacg_quadratic(psi, binv):
    """See facsep._kernels._py.cacg_quadratic."""
    cdef double complex[:, :, ::1] pv = np.ascontiguousarray(psi, dtype=np.complex128)
    cdef double complex[:, :, :, ::1] bv = np.ascontiguousarray(binv, dtype=np.complex128)
    cdef Py_ssize_t T = pv.shape[0], F = pv.shape[1], M = pv.shape[2]
    cdef Py_ssize_t K = bv.shape[0]
    if bv.shape[1] != F or bv.shape[2] != M or bv.shape[3] != M:
        raise ValueError("binv shape does not match psi")
    out_arr = np.empty((K, T, F), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t k, t, f, m, n
    cdef double complex acc, row
    with nogil:
        for k in range(K):
            for t in range(T):
                for f in range(F):
                    acc = 0.0
                    for m in range(M):
                        row = 0.0
                        for n in range(M):
                            row = row + bv[k, f, m, n] * pv[t, f, n]
                        acc = acc + row * pv[t, f, m].conjugate()
                    out[k, t, f] = acc.real
    return out_arr


def cacg_scatter(psi, w):
    """See facsep._kernels._py.cacg_scatter."""
    cdef double complex[:, :, ::1] pv = np.ascontiguousarray(psi, dtype=np.complex128)
    cdef double[:, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t T = pv.shape[0], F = pv.shape[1], M = pv.shape[2]
    cdef Py_ssize_t K = wv.shape[0]
    if wv.shape[1] != T or wv.shape[2] != F:
        raise ValueError("w shape does not match psi")
    out_arr = np.zeros((K, F, M, M), dtype=np.complex128)
    cdef double complex[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t k, t, f, m, n
    cdef double weight
    cdef double complex pm
    with nogil:
        for k in range(K):
            for t in range(T):
                for f in range(F):
                    weight = wv[k, t, f]
                    if weight == 0.0:
                        continue
                    for m in range(M):
                        pm = weight * pv[t, f, m]
                        for n in range(M):
                            out[k, f, m, n] = out[k, f, m, n] + pm * pv[t, f, n].conjugate()
    return out_arr
