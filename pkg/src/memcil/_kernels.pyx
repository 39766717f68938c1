# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dense-layer and loss kernels.

Matrix products go through scipy's BLAS (dgemm) and the elementwise parts
(bias, ReLU mask, sigmoid, cross-entropy) are fused into single passes.
All arrays are C-contiguous float64; memcil.kernels guarantees that.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND = "compiled"


cdef inline void _gemm(char transa, char transb, int m, int n, int k,
                       double *a, int lda, double *b, int ldb,
                       double *c, int ldc) noexcept nogil:
    cdef double one = 1.0, zero = 0.0
    dgemm(&transa, &transb, &m, &n, &k, &one, a, &lda, b, &ldb, &zero, c, &ldc)


def dense_forward(double[:, ::1] x, double[:, ::1] w, double[::1] b, bint relu):
    cdef Py_ssize_t n = x.shape[0], d_in = x.shape[1], d_out = w.shape[0]
    cdef Py_ssize_t i, j
    cdef double v
    out_arr = np.zeros((n, d_out), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if n == 0 or d_out == 0:
        return out_arr
    with nogil:
        if d_in > 0:
            # row-major Z = X W^T  <=>  column-major Z^T = W X^T
            _gemm(b'T', b'N', <int>d_out, <int>n, <int>d_in,
                  &w[0, 0], <int>d_in, &x[0, 0], <int>d_in,
                  &out[0, 0], <int>d_out)
        for i in range(n):
            for j in range(d_out):
                v = out[i, j] + b[j]
                if relu and v < 0.0:
                    v = 0.0
                out[i, j] = v
    return out_arr


def dense_backward(double[:, ::1] x, double[:, ::1] w, double[:, ::1] out,
                   double[:, ::1] grad_out, bint relu):
    cdef Py_ssize_t n = x.shape[0], d_in = x.shape[1], d_out = w.shape[0]
    cdef Py_ssize_t i, j
    g_arr = np.empty((n, d_out), dtype=np.float64)
    gw_arr = np.zeros((d_out, d_in), dtype=np.float64)
    gb_arr = np.zeros(d_out, dtype=np.float64)
    gx_arr = np.zeros((n, d_in), dtype=np.float64)
    cdef double[:, ::1] g = g_arr
    cdef double[:, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef double[:, ::1] gx = gx_arr
    if n == 0 or d_out == 0:
        return gx_arr, gw_arr, gb_arr
    with nogil:
        for i in range(n):
            for j in range(d_out):
                if relu and out[i, j] <= 0.0:
                    g[i, j] = 0.0
                else:
                    g[i, j] = grad_out[i, j]
                gb[j] += g[i, j]
        if d_in > 0:
            # grad_w^T (col-major, in x out) = X^T G
            _gemm(b'N', b'T', <int>d_in, <int>d_out, <int>n,
                  &x[0, 0], <int>d_in, &g[0, 0], <int>d_out,
                  &gw[0, 0], <int>d_in)
            # grad_x^T (col-major, in x n) = W^T G^T
            _gemm(b'N', b'N', <int>d_in, <int>n, <int>d_out,
                  &w[0, 0], <int>d_in, &g[0, 0], <int>d_out,
                  &gx[0, 0], <int>d_in)
    return gx_arr, gw_arr, gb_arr


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def sigmoid_bce(double[:, ::1] logits, double[:, ::1] targets,
                double[::1] class_weights, double[::1] sample_weights):
    cdef Py_ssize_t n = logits.shape[0], m = logits.shape[1]
    cdef Py_ssize_t i, j
    cdef double z, t, sp, row, total = 0.0, cw, sw
    grad_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    with nogil:
        for i in range(n):
            row = 0.0
            sw = sample_weights[i]
            for j in range(m):
                z = logits[i, j]
                t = targets[i, j]
                cw = class_weights[j]
                sp = (z if z > 0.0 else 0.0) + log1p(exp(-fabs(z)))
                row += (sp - t * z) * cw
                grad[i, j] = (_sigmoid(z) - t) * cw * sw
            total += row * sw
    return total, grad


def sigmoid(double[:, ::1] z):
    cdef Py_ssize_t n = z.shape[0], m = z.shape[1], i, j
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(m):
                out[i, j] = _sigmoid(z[i, j])
    return out_arr
