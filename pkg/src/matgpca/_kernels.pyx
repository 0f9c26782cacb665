# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled thresholding kernels; same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY

cnp.import_array()


def soft_threshold(S, tau):
    cdef const double[:, ::1] s = np.ascontiguousarray(S, dtype=np.float64)
    cdef const double[:, ::1] t = np.ascontiguousarray(np.broadcast_to(tau, np.shape(S)), dtype=np.float64)
    cdef Py_ssize_t p = s.shape[0], q = s.shape[1], i, j
    out = np.empty((p, q), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double a, x
    for i in range(p):
        for j in range(q):
            x = s[i, j]
            if i == j:
                o[i, j] = x
                continue
            a = fabs(x) - t[i, j]
            if a <= 0.0:
                o[i, j] = 0.0
            elif x >= 0.0:
                o[i, j] = a
            else:
                o[i, j] = -a
    return out


def cv_grid_objective(S_train, scale, S_val, grid):
    cdef const double[:, ::1] s = np.ascontiguousarray(S_train, dtype=np.float64)
    cdef const double[:, ::1] sc = np.ascontiguousarray(scale, dtype=np.float64)
    cdef const double[:, ::1] v = np.ascontiguousarray(S_val, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(grid, dtype=np.float64)
    cdef Py_ssize_t p = s.shape[0], n = g.shape[0], i, j, k
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double a, x, y, d, diag = 0.0
    for i in range(p):
        d = s[i, i] - v[i, i]
        diag += d * d
    # accumulate per grid value in a fixed order (entries row-major, upper triangle doubled)
    for i in range(p):
        for j in range(i + 1, p):
            x = s[i, j]
            for k in range(n):
                a = fabs(x) - g[k] * sc[i, j]
                if a <= 0.0:
                    y = 0.0
                elif x >= 0.0:
                    y = a
                else:
                    y = -a
                d = y - v[i, j]
                o[k] += 2.0 * d * d
    for k in range(n):
        o[k] += diag
    return out


def diagonal_cap(S, scale):
    cdef const double[:, ::1] s = np.ascontiguousarray(S, dtype=np.float64)
    cdef const double[:, ::1] sc = np.ascontiguousarray(scale, dtype=np.float64)
    cdef Py_ssize_t p = s.shape[0], i, j
    cdef double best = 0.0, a, r
    for i in range(p):
        for j in range(p):
            if i == j:
                continue
            a = fabs(s[i, j])
            if a == 0.0:
                continue
            if sc[i, j] <= 0.0:
                return INFINITY
            r = a / sc[i, j]
            if r > best:
                best = r
    return best
