# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im.  Semantics mirror gait._kernels_py exactly."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] xp, int kh, int kw, int stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    cdef Py_ssize_t hw = ho * wo
    out = np.empty((c * kh * kw, n * hw), dtype=np.float64)
    cdef double[:, ::1] cols = out
    cdef Py_ssize_t b, ch, ki, kj, i, j, row, base
    with nogil:
        for ch in range(c):
            for ki in range(kh):
                for kj in range(kw):
                    row = (ch * kh + ki) * kw + kj
                    for b in range(n):
                        base = b * hw
                        for i in range(ho):
                            for j in range(wo):
                                cols[row, base + i * wo + j] = xp[b, ch, i * stride + ki, j * stride + kj]
    return out


def col2im(cols_in, shape, int kh, int kw, int stride):
    cdef Py_ssize_t n = shape[0], c = shape[1], hp = shape[2], wp = shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    cdef Py_ssize_t hw = ho * wo
    cdef const double[:, ::1] cols = np.ascontiguousarray(
        cols_in, dtype=np.float64).reshape(c * kh * kw, n * hw)
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, ki, kj, i, j, row, base
    with nogil:
        for ch in range(c):
            for ki in range(kh):
                for kj in range(kw):
                    row = (ch * kh + ki) * kw + kj
                    for b in range(n):
                        base = b * hw
                        for i in range(ho):
                            for j in range(wo):
                                o[b, ch, i * stride + ki, j * stride + kj] += cols[row, base + i * wo + j]
    return out


# Direct convolution for kernels with very few output channels, where an
# im2col GEMM has no reuse and is bound by writing the column matrix.

def conv_direct(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] w, int stride):
    cdef Py_ssize_t n = xp.shape[0], cin = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, co, ci, ki, kj, i, j
    cdef double wv
    with nogil:
        for b in range(n):
            for co in range(cout):
                for ci in range(cin):
                    for ki in range(kh):
                        for kj in range(kw):
                            wv = w[co, ci, ki, kj]
                            for i in range(ho):
                                for j in range(wo):
                                    o[b, co, i, j] += wv * xp[b, ci, i * stride + ki, j * stride + kj]
    return out


def conv_direct_input_grad(const double[:, :, :, ::1] g, const double[:, :, :, ::1] w, padded_shape, int stride):
    cdef Py_ssize_t n = g.shape[0], cout = g.shape[1], ho = g.shape[2], wo = g.shape[3]
    cdef Py_ssize_t cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    out = np.zeros(padded_shape, dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, co, ci, ki, kj, i, j
    cdef double wv
    with nogil:
        for b in range(n):
            for co in range(cout):
                for ci in range(cin):
                    for ki in range(kh):
                        for kj in range(kw):
                            wv = w[co, ci, ki, kj]
                            for i in range(ho):
                                for j in range(wo):
                                    o[b, ci, i * stride + ki, j * stride + kj] += wv * g[b, co, i, j]
    return out


def conv_direct_weight_grad(const double[:, :, :, ::1] g, const double[:, :, :, ::1] xp, w_shape, int stride):
    cdef Py_ssize_t n = g.shape[0], cout = g.shape[1], ho = g.shape[2], wo = g.shape[3]
    cdef Py_ssize_t cin = w_shape[1], kh = w_shape[2], kw = w_shape[3]
    out = np.zeros(w_shape, dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, co, ci, ki, kj, i, j
    cdef double acc
    with nogil:
        for co in range(cout):
            for ci in range(cin):
                for ki in range(kh):
                    for kj in range(kw):
                        acc = 0.0
                        for b in range(n):
                            for i in range(ho):
                                for j in range(wo):
                                    acc = acc + g[b, co, i, j] * xp[b, ci, i * stride + ki, j * stride + kj]
                        o[co, ci, ki, kj] = acc
    return out
