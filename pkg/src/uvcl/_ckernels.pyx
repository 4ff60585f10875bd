# cython: language_level=3
"""Compiled Gaussian-kernel loops: density sums, mean-shift and nearest rows.

Every routine releases the GIL for its inner loops. Each mean-shift seed is
iterated independently, so results never depend on seed order.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


cdef inline double _sqdist(const double[:, ::1] a, Py_ssize_t i,
                           const double[:, ::1] b, Py_ssize_t j,
                           Py_ssize_t d) noexcept nogil:
    cdef double acc = 0.0, t
    cdef Py_ssize_t k
    for k in range(d):
        t = a[i, k] - b[j, k]
        acc += t * t
    return acc


def kde_density_many(points, data, double h):
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] x = np.ascontiguousarray(data, dtype=np.float64)
    cdef Py_ssize_t m = p.shape[0], n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double inv = 1.0 / (2.0 * h * h), acc
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(m):
            acc = 0.0
            for j in range(n):
                acc += exp(-_sqdist(p, i, x, j, d) * inv)
            out[i] = acc
    return out_arr


def mean_shift_seeds(seeds, data, double h, double eps, long max_iter):
    y_arr = np.array(seeds, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] y = y_arr
    cdef const double[:, ::1] x = np.ascontiguousarray(data, dtype=np.float64)
    cdef Py_ssize_t m = y.shape[0], n = x.shape[0], d = x.shape[1]
    iters_arr = np.zeros(m, dtype=np.int64)
    isolated_arr = np.zeros(m, dtype=np.uint8)
    cdef long long[::1] iters = iters_arr
    cdef unsigned char[::1] isolated = isolated_arr
    num_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] num = num_arr
    cdef double inv = 1.0 / (2.0 * h * h)
    cdef double den, w, shift, t
    cdef Py_ssize_t s, i, k
    cdef long it
    with nogil:
        for s in range(m):
            for it in range(max_iter):
                for k in range(d):
                    num[k] = 0.0
                den = 0.0
                for i in range(n):
                    w = exp(-_sqdist(y, s, x, i, d) * inv)
                    if w != 0.0:
                        den += w
                        for k in range(d):
                            num[k] += w * x[i, k]
                if den == 0.0:
                    isolated[s] = 1
                    break
                shift = 0.0
                for k in range(d):
                    t = num[k] / den
                    shift += (t - y[s, k]) * (t - y[s, k])
                    y[s, k] = t
                iters[s] += 1
                if sqrt(shift) < eps:
                    break
    return y_arr, iters_arr, isolated_arr.astype(bool)


def nearest_rows(data, centers):
    cdef const double[:, ::1] x = np.ascontiguousarray(data, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], L = c.shape[0], d = x.shape[1]
    idx_arr = np.empty(n, dtype=np.int64)
    best_arr = np.empty(n, dtype=np.float64)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] best = best_arr
    cdef Py_ssize_t i, j
    cdef double d2, b
    cdef long long bj
    with nogil:
        for i in range(n):
            b = _sqdist(x, i, c, 0, d)
            bj = 0
            for j in range(1, L):
                d2 = _sqdist(x, i, c, j, d)
                if d2 < b:
                    b = d2
                    bj = j
            idx[i] = bj
            best[i] = b
    return idx_arr, best_arr
