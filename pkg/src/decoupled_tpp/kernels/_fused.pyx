# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled fused kernels: dense-chain MLP forward/backward and softplus.

Matmuls call BLAS dgemm directly (via scipy's exported C symbols), bias adds
and the tanh gradient are single-pass C loops, and transcendental activations
go through numpy's SIMD ufuncs in place (scalar libm calls are far slower).
Signatures and save-buffer layouts match kernels._pure exactly.
"""

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

NAME = "compiled"


cdef void _gemm_nn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # row-major c(m,n) = a(m,k) @ b(k,n)
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef double one = 1.0, zero = 0.0
    dgemm("N", "N", &n, &m, &k, &one, &b[0, 0], &n, &a[0, 0], &k, &zero, &c[0, 0], &n)


cdef void _gemm_at_b(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # row-major c(k,n) = a(m,k).T @ b(m,n)
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef double one = 1.0, zero = 0.0
    dgemm("N", "T", &n, &k, &m, &one, &b[0, 0], &n, &a[0, 0], &k, &zero, &c[0, 0], &n)


cdef void _gemm_a_bt(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # row-major c(m,k) = a(m,n) @ b(k,n).T
    cdef int m = a.shape[0], n = a.shape[1], k = b.shape[0]
    cdef double one = 1.0, zero = 0.0
    dgemm("T", "N", &k, &m, &n, &one, &b[0, 0], &n, &a[0, 0], &n, &zero, &c[0, 0], &k)


def softplus(object x):
    """Overflow-safe ln(1 + e^x): returns x for x > 30 and e^x for x < -30."""
    arr = np.asarray(x, dtype=np.float64)
    ex = np.exp(np.clip(arr, None, 30.0))
    out = np.log1p(ex)
    out = np.where(arr < -30.0, ex, out)
    return np.where(arr > 30.0, arr, out)


def softplus_grad(object x, object grad_out):
    """sigmoid(x) * grad_out."""
    arr = np.asarray(x, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    e = np.exp(-np.abs(arr))
    sig = np.where(arr >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    return sig * g


cdef void _add_bias(double[:, ::1] z, double[::1] b) noexcept nogil:
    cdef Py_ssize_t i, j, rows = z.shape[0], cols = z.shape[1]
    for i in range(rows):
        for j in range(cols):
            z[i, j] += b[j]


cdef void _tanh_grad_inplace(double[:, ::1] dz, double[:, ::1] post) noexcept nogil:
    cdef Py_ssize_t i, j, rows = dz.shape[0], cols = dz.shape[1]
    cdef double a
    for i in range(rows):
        for j in range(cols):
            a = post[i, j]
            dz[i, j] *= 1.0 - a * a


cdef int _act_code(str activation) except -1:
    if activation == "tanh":
        return 0
    if activation == "softplus":
        return 1
    raise ValueError(f"unknown activation {activation!r}")


def mlp_forward(object x, list weights, list biases, str activation="tanh"):
    """Dense chain with linear last layer; returns (out, layer inputs)."""
    cdef int code = _act_code(activation)
    cdef cnp.ndarray h = np.ascontiguousarray(x, dtype=np.float64)
    cdef list acts = [h]
    cdef Py_ssize_t layer, last = len(weights) - 1
    cdef cnp.ndarray w, b, z
    for layer in range(len(weights)):
        w = np.ascontiguousarray(weights[layer], dtype=np.float64)
        b = np.ascontiguousarray(biases[layer], dtype=np.float64)
        z = np.empty((h.shape[0], w.shape[1]), dtype=np.float64)
        _gemm_nn(h, w, z)
        _add_bias(z, b)
        if layer < last:
            if code == 0:
                np.tanh(z, out=z)
            else:
                z[...] = softplus(z)
            acts.append(z)
        h = z
    return h, acts


def mlp_backward(object grad_out, list acts, list weights, str activation="tanh"):
    """Gradients of mlp_forward: (dx, dweights, dbiases)."""
    cdef int code = _act_code(activation)
    cdef Py_ssize_t n_layers = len(weights)
    cdef list grads_w = [None] * n_layers
    cdef list grads_b = [None] * n_layers
    cdef cnp.ndarray dz = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef cnp.ndarray a_in, w, dw, dprev, post
    cdef Py_ssize_t layer
    for layer in range(n_layers - 1, -1, -1):
        a_in = np.ascontiguousarray(acts[layer])
        w = np.ascontiguousarray(weights[layer], dtype=np.float64)
        dw = np.empty((a_in.shape[1], dz.shape[1]), dtype=np.float64)
        _gemm_at_b(a_in, dz, dw)
        grads_w[layer] = dw
        grads_b[layer] = np.asarray(dz).sum(axis=0)
        dprev = np.empty((dz.shape[0], w.shape[0]), dtype=np.float64)
        _gemm_a_bt(dz, w, dprev)
        if layer > 0:
            post = np.ascontiguousarray(acts[layer])
            if code == 0:
                _tanh_grad_inplace(dprev, post)
            else:
                dprev *= -np.expm1(-post)
        dz = dprev
    return dz, grads_w, grads_b
