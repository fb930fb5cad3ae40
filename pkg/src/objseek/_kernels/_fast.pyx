# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled gallery scan kernels (hot path of every interaction round)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp


def sscan_scores(double[:, :, ::1] regions, int[::1] counts, double[::1] query,
                 out=None):
    """Fused cosine + softmax attention scan; see objseek._kernels.pure."""
    cdef Py_ssize_t n_img = regions.shape[0]
    cdef Py_ssize_t m_max = regions.shape[1]
    cdef Py_ssize_t dim = regions.shape[2]
    if out is None:
        out = np.empty(n_img, dtype=np.float64)
    cdef double[::1] res = out
    cdef double[::1] cos = np.empty(m_max, dtype=np.float64)
    cdef Py_ssize_t n, m, j, cnt
    cdef double acc, mx, w, wsum, weighted
    for n in range(n_img):
        cnt = counts[n]
        mx = -1e308
        for m in range(cnt):
            acc = 0.0
            for j in range(dim):
                acc += regions[n, m, j] * query[j]
            cos[m] = acc
            if acc > mx:
                mx = acc
        wsum = 0.0
        weighted = 0.0
        for m in range(cnt):
            w = exp(cos[m] - mx)
            wsum += w
            weighted += w * cos[m]
        res[n] = weighted / (wsum * cnt)
    return out


def dot_scores(double[:, ::1] vectors, double[::1] query, out=None):
    cdef Py_ssize_t n_img = vectors.shape[0]
    cdef Py_ssize_t dim = vectors.shape[1]
    if out is None:
        out = np.empty(n_img, dtype=np.float64)
    cdef double[::1] res = out
    cdef Py_ssize_t n, j
    cdef double acc
    for n in range(n_img):
        acc = 0.0
        for j in range(dim):
            acc += vectors[n, j] * query[j]
        res[n] = acc
    return out
