# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled network kernels: BLAS matmuls with fused bias/ReLU loops.

Same contract as ``numpy_ops``; selected at import when built.
"""

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

NAME = "cython"

ctypedef double f64


cdef void _gemm_nn(f64[:, ::1] a, f64[:, ::1] b, f64[:, ::1] c, f64 beta) noexcept nogil:
    # c(m,n) = a(m,k) @ b(k,n) + beta*c   (row-major via transposed column-major call)
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef f64 alpha = 1.0
    if m == 0 or n == 0 or k == 0:
        return
    dgemm("N", "N", &n, &m, &k, &alpha, &b[0, 0], &n, &a[0, 0], &k, &beta, &c[0, 0], &n)


cdef void _gemm_tn(f64[:, ::1] a, f64[:, ::1] b, f64[:, ::1] c) noexcept nogil:
    # c(m,n) = a(k,m).T @ b(k,n)
    cdef int k = a.shape[0], m = a.shape[1], n = b.shape[1]
    cdef f64 alpha = 1.0, beta = 0.0
    if m == 0 or n == 0:
        return
    if k == 0:
        c[:, :] = 0.0
        return
    dgemm("N", "T", &n, &m, &k, &alpha, &b[0, 0], &n, &a[0, 0], &m, &beta, &c[0, 0], &n)


cdef void _gemm_nt(f64[:, ::1] a, f64[:, ::1] b, f64[:, ::1] c) noexcept nogil:
    # c(m,n) = a(m,k) @ b(n,k).T
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[0]
    cdef f64 alpha = 1.0, beta = 0.0
    if m == 0 or n == 0:
        return
    if k == 0:
        c[:, :] = 0.0
        return
    dgemm("T", "N", &n, &m, &k, &alpha, &b[0, 0], &k, &a[0, 0], &k, &beta, &c[0, 0], &n)


cdef void _bias_relu(f64[:, ::1] z, f64[::1] b) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef f64 v
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            v = z[i, j] + b[j]
            z[i, j] = v if v > 0.0 else 0.0


cdef void _bias(f64[:, ::1] z, f64[::1] b) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            z[i, j] += b[j]


cdef void _relu_mask(f64[:, ::1] dz, f64[:, ::1] h) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(dz.shape[0]):
        for j in range(dz.shape[1]):
            if h[i, j] <= 0.0:
                dz[i, j] = 0.0


cdef void _col_sum(f64[:, ::1] a, f64[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    out[:] = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[j] += a[i, j]


def mlp_forward(layers, cnp.ndarray x):
    (w0, b0), (w1, b1), (w2, b2) = layers
    cdef Py_ssize_t m = x.shape[0]
    h1 = np.empty((m, (<object>w0).shape[1]))
    h2 = np.empty((m, (<object>w1).shape[1]))
    y = np.empty((m, (<object>w2).shape[1]))
    _gemm_nn(x, w0, h1, 0.0)
    _bias_relu(h1, b0)
    _gemm_nn(h1, w1, h2, 0.0)
    _bias_relu(h2, b1)
    _gemm_nn(h2, w2, y, 0.0)
    _bias(y, b2)
    return y


def mlp_forward_cache(layers, cnp.ndarray x):
    (w0, b0), (w1, b1), (w2, b2) = layers
    cdef Py_ssize_t m = x.shape[0]
    h1 = np.empty((m, (<object>w0).shape[1]))
    h2 = np.empty((m, (<object>w1).shape[1]))
    y = np.empty((m, (<object>w2).shape[1]))
    _gemm_nn(x, w0, h1, 0.0)
    _bias_relu(h1, b0)
    _gemm_nn(h1, w1, h2, 0.0)
    _bias_relu(h2, b1)
    _gemm_nn(h2, w2, y, 0.0)
    _bias(y, b2)
    return y, h1, h2


def mlp_backward(layers, cnp.ndarray x, cnp.ndarray h1, cnp.ndarray h2, cnp.ndarray dy):
    (w0, _), (w1, _), (w2, _) = layers
    cdef Py_ssize_t m = x.shape[0]
    dw2 = np.empty_like(np.asarray(w2))
    db2 = np.empty((<object>w2).shape[1])
    dw1 = np.empty_like(np.asarray(w1))
    db1 = np.empty((<object>w1).shape[1])
    dw0 = np.empty_like(np.asarray(w0))
    db0 = np.empty((<object>w0).shape[1])
    dz2 = np.empty((m, (<object>w1).shape[1]))
    dz1 = np.empty((m, (<object>w0).shape[1]))
    dx = np.empty((m, (<object>w0).shape[0]))

    _gemm_tn(h2, dy, dw2)
    _col_sum(dy, db2)
    _gemm_nt(dy, w2, dz2)
    _relu_mask(dz2, h2)
    _gemm_tn(h1, dz2, dw1)
    _col_sum(dz2, db1)
    _gemm_nt(dz2, w1, dz1)
    _relu_mask(dz1, h1)
    _gemm_tn(x, dz1, dw0)
    _col_sum(dz1, db0)
    _gemm_nt(dz1, w0, dx)
    return [(dw0, db0), (dw1, db1), (dw2, db2)], dx
