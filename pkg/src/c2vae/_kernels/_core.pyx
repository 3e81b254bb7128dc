# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Fused float64 kernels for the tensor layer's hot paths.

Single-pass loops replace numpy's multi-temporary expressions for the
activation forward/backward pairs and the Adam update; matmul/linear go
through BLAS dgemm. The numpy fallback in c2vae.backend implements the same
API — see benchmarks/bench_kernels.py for the comparison.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp, log as c_log, log1p as c_log1p
from libc.math cimport tanh as c_tanh, sqrt as c_sqrt, isfinite as c_isfinite
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

name = "cython"

DEF LEAKY_SLOPE = 0.2


# ---------------------------------------------------------------------------
# BLAS-backed linear algebra
# ---------------------------------------------------------------------------

cdef void _gemm_rowmajor(double[:, ::1] a, double[:, ::1] b,
                         double[:, ::1] c) noexcept nogil:
    # row-major C = A·B as column-major Cᵀ = Bᵀ·Aᵀ
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef double alpha = 1.0, beta = 0.0
    if m == 0 or n == 0 or k == 0:
        return
    dgemm("N", "N", &n, &m, &k, &alpha, &b[0, 0], &n, &a[0, 0], &k,
          &beta, &c[0, 0], &n)


def matmul(a, b):
    cdef double[:, ::1] av = np.ascontiguousarray(a)
    cdef double[:, ::1] bv = np.ascontiguousarray(b)
    out = np.zeros((av.shape[0], bv.shape[1]))
    cdef double[:, ::1] cv = out
    _gemm_rowmajor(av, bv, cv)
    return out


def linear(x, w, b):
    cdef double[:, ::1] xv = np.ascontiguousarray(x)
    cdef double[:, ::1] wv = np.ascontiguousarray(w)
    cdef double[::1] bv = np.ascontiguousarray(b)
    out = np.zeros((xv.shape[0], wv.shape[1]))
    cdef double[:, ::1] cv = out
    cdef Py_ssize_t i, j, n = xv.shape[0], m = wv.shape[1]
    _gemm_rowmajor(xv, wv, cv)
    with nogil:
        for i in range(n):
            for j in range(m):
                cv[i, j] += bv[j]
    return out


# ---------------------------------------------------------------------------
# fused elementwise forward/backward pairs
# ---------------------------------------------------------------------------

cdef inline double _softplus1(double v) noexcept nogil:
    if v > 0.0:
        return v + c_log1p(c_exp(-v))
    return c_log1p(c_exp(v))


def sigmoid(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = 1.0 / (1.0 + c_exp(-xv[i]))
    return out


def sigmoid_bwd(y, g):
    y = np.ascontiguousarray(y)
    out = np.empty_like(y)
    cdef double[::1] yv = y.ravel()
    cdef double[::1] gv = np.ascontiguousarray(g).ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = yv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = gv[i] * yv[i] * (1.0 - yv[i])
    return out


def tanh(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = c_tanh(xv[i])
    return out


def tanh_bwd(y, g):
    y = np.ascontiguousarray(y)
    out = np.empty_like(y)
    cdef double[::1] yv = y.ravel()
    cdef double[::1] gv = np.ascontiguousarray(g).ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = yv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = gv[i] * (1.0 - yv[i] * yv[i])
    return out


def softplus(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = _softplus1(xv[i])
    return out


def softplus_bwd(x, g):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] gv = np.ascontiguousarray(g).ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = gv[i] / (1.0 + c_exp(-xv[i]))
    return out


def relu(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = xv[i] if xv[i] > 0.0 else 0.0
    return out


def relu_bwd(x, g):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] gv = np.ascontiguousarray(g).ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = gv[i] if xv[i] > 0.0 else 0.0
    return out


def leaky_relu(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = xv[i] if xv[i] > 0.0 else LEAKY_SLOPE * xv[i]
    return out


def leaky_relu_bwd(x, g):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] gv = np.ascontiguousarray(g).ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = gv[i] if xv[i] > 0.0 else LEAKY_SLOPE * gv[i]
    return out


def exp(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = c_exp(xv[i])
    return out


def log(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = c_log(xv[i])
    return out


# ---------------------------------------------------------------------------
# optimizer + checks
# ---------------------------------------------------------------------------

def adam_update(p, g, m, v, double lr, double beta1, double beta2,
                double eps, double bc1, double bc2):
    """One fused in-place Adam step on (p, m, v) given gradient g."""
    cdef double[::1] pv = p.ravel()
    cdef double[::1] gv = np.ascontiguousarray(g).ravel()
    cdef double[::1] mv = m.ravel()
    cdef double[::1] vv = v.ravel()
    cdef Py_ssize_t i, n = pv.shape[0]
    cdef double mi, vi
    with nogil:
        for i in range(n):
            mi = beta1 * mv[i] + (1.0 - beta1) * gv[i]
            vi = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i]
            mv[i] = mi
            vv[i] = vi
            pv[i] -= lr * (mi / bc1) / (c_sqrt(vi / bc2) + eps)


cdef bint _all_finite(double[::1] xv) noexcept nogil:
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        if not c_isfinite(xv[i]):
            return False
    return True


def all_finite(x):
    """Early-exit finiteness scan."""
    cdef double[::1] xv = np.ascontiguousarray(x).ravel()
    return bool(_all_finite(xv))
