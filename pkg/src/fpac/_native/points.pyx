# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Fused forward kernels for feature-point extraction on float32 maps (B, K, H, W)."""

import numpy as np

from libc.math cimport exp, tanh


cdef inline double _grid(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    if n == 1:
        return -1.0
    return -1.0 + 2.0 * i / (n - 1)


cdef double _expect(double* profile, Py_ssize_t n, double scale) noexcept nogil:
    # softmax(profile * scale) expectation over the normalized grid
    cdef Py_ssize_t i
    cdef double hi = profile[0]
    cdef double z = 0.0, acc = 0.0, e
    for i in range(1, n):
        if profile[i] > hi:
            hi = profile[i]
    for i in range(n):
        e = exp((profile[i] - hi) * scale)
        z += e
        acc += e * _grid(i, n)
    return acc / z


def separable_points(const float[:, :, :, ::1] maps, double beta):
    """(x, y, m) per channel from mean-pooled 1D softmaxes."""
    cdef Py_ssize_t B = maps.shape[0], K = maps.shape[1], H = maps.shape[2], W = maps.shape[3]
    out = np.empty((B, K, 3), dtype=np.float32)
    cdef float[:, :, ::1] o = out
    cols_arr = np.empty(W, dtype=np.float64)
    rows_arr = np.empty(H, dtype=np.float64)
    cdef double[::1] cols = cols_arr
    cdef double[::1] rows = rows_arr
    cdef Py_ssize_t b, k, y, x
    cdef double v, rowacc, total
    with nogil:
        for b in range(B):
            for k in range(K):
                for x in range(W):
                    cols[x] = 0.0
                total = 0.0
                for y in range(H):
                    rowacc = 0.0
                    for x in range(W):
                        v = maps[b, k, y, x]
                        cols[x] += v
                        rowacc += v
                    rows[y] = rowacc
                    total += rowacc
                # sums instead of means: fold the 1/H and 1/W into the softmax scale
                o[b, k, 0] = <float>_expect(&cols[0], W, 1.0 / (H * beta))
                o[b, k, 1] = <float>_expect(&rows[0], H, 1.0 / (W * beta))
                o[b, k, 2] = <float>tanh(total / (H * W))
    return out


def softmax2d_points(const float[:, :, :, ::1] maps, double beta):
    """(x, y, m) per channel from a full spatial softmax, in one fused pass."""
    cdef Py_ssize_t B = maps.shape[0], K = maps.shape[1], H = maps.shape[2], W = maps.shape[3]
    out = np.empty((B, K, 3), dtype=np.float32)
    cdef float[:, :, ::1] o = out
    cdef Py_ssize_t b, k, y, x
    cdef double hi, v, e, z, sx, sy, rowz, total
    cdef double inv_beta = 1.0 / beta
    with nogil:
        for b in range(B):
            for k in range(K):
                hi = maps[b, k, 0, 0]
                total = 0.0
                for y in range(H):
                    for x in range(W):
                        v = maps[b, k, y, x]
                        total += v
                        if v > hi:
                            hi = v
                z = 0.0
                sx = 0.0
                sy = 0.0
                for y in range(H):
                    rowz = 0.0
                    for x in range(W):
                        e = exp((maps[b, k, y, x] - hi) * inv_beta)
                        rowz += e
                        sx += e * _grid(x, W)
                    sy += rowz * _grid(y, H)
                    z += rowz
                o[b, k, 0] = <float>(sx / z)
                o[b, k, 1] = <float>(sy / z)
                o[b, k, 2] = <float>tanh(total / (H * W))
    return out
