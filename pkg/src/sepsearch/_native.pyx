# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; same contracts as ``_fallback``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "native"


def score_rows(const double[:, ::1] X, const double[::1] q, rows=None):
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t i, j, r, n
    cdef double acc
    cdef const long long[::1] rv
    cdef double[::1] out
    if rows is None:
        n = X.shape[0]
        res = np.empty(n, dtype=np.float64)
        out = res
        for i in range(n):
            acc = 0.0
            for j in range(d):
                acc += X[i, j] * q[j]
            out[i] = acc
        return res
    rv = np.ascontiguousarray(rows, dtype=np.int64)
    n = rv.shape[0]
    res = np.empty(n, dtype=np.float64)
    out = res
    for i in range(n):
        r = rv[i]
        acc = 0.0
        for j in range(d):
            acc += X[r, j] * q[j]
        out[i] = acc
    return res


def dense_forward(const double[:, ::1] X, const double[:, ::1] W, b=None):
    cdef Py_ssize_t n = X.shape[0], fan_in = X.shape[1], fan_out = W.shape[0]
    cdef Py_ssize_t i, o, j
    cdef double acc
    cdef const double[::1] bv
    cdef bint has_bias = b is not None
    res = np.empty((n, fan_out), dtype=np.float64)
    cdef double[:, ::1] out = res
    if has_bias:
        bv = np.ascontiguousarray(b, dtype=np.float64)
    for i in range(n):
        for o in range(fan_out):
            acc = 0.0
            for j in range(fan_in):
                acc += X[i, j] * W[o, j]
            if has_bias:
                acc = acc + bv[o]
            out[i, o] = acc
    return res


cdef inline bint _worse(double sa, long long ra, double sb, long long rb) noexcept nogil:
    # a ranks below b: lower score, or equal score and larger tie rank
    return sa < sb or (sa == sb and ra > rb)


cdef void _sift_down(double* hs, long long* hr, long long* hi, Py_ssize_t size, Py_ssize_t pos) noexcept nogil:
    cdef Py_ssize_t child, worst
    cdef double ts
    cdef long long tr, ti
    while True:
        child = 2 * pos + 1
        if child >= size:
            return
        worst = child
        if child + 1 < size and _worse(hs[child + 1], hr[child + 1], hs[child], hr[child]):
            worst = child + 1
        if not _worse(hs[worst], hr[worst], hs[pos], hr[pos]):
            return
        ts = hs[pos]; hs[pos] = hs[worst]; hs[worst] = ts
        tr = hr[pos]; hr[pos] = hr[worst]; hr[worst] = tr
        ti = hi[pos]; hi[pos] = hi[worst]; hi[worst] = ti
        pos = worst


def topk(const double[::1] scores, const long long[::1] tie_rank, Py_ssize_t k):
    cdef Py_ssize_t n = scores.shape[0]
    cdef Py_ssize_t i, size
    if k > n:
        k = n
    hs_arr = np.empty(k, dtype=np.float64)
    hr_arr = np.empty(k, dtype=np.int64)
    hi_arr = np.empty(k, dtype=np.int64)
    cdef double[::1] hs = hs_arr
    cdef long long[::1] hr = hr_arr
    cdef long long[::1] hi = hi_arr
    if k == 0:
        return hi_arr
    # min-heap keyed on "worst kept candidate"
    size = 0
    with nogil:
        for i in range(n):
            if size < k:
                hs[size] = scores[i]; hr[size] = tie_rank[i]; hi[size] = i
                size += 1
                if size == k:
                    for pos in range(k // 2 - 1, -1, -1):
                        _sift_down(&hs[0], &hr[0], &hi[0], k, pos)
            elif _worse(hs[0], hr[0], scores[i], tie_rank[i]):
                hs[0] = scores[i]; hr[0] = tie_rank[i]; hi[0] = i
                _sift_down(&hs[0], &hr[0], &hi[0], k, 0)
    order = np.lexsort((hr_arr, -hs_arr))
    return hi_arr[order]


def kmeans_assign(const double[:, ::1] X, const double[:, ::1] centroids):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], C = centroids.shape[0]
    cdef Py_ssize_t i, c, j
    cdef double best, dist, diff
    res = np.empty(n, dtype=np.int64)
    cdef long long[::1] labels = res
    with nogil:
        for i in range(n):
            best = 1.0 / 0.0
            labels[i] = 0
            for c in range(C):
                dist = 0.0
                for j in range(d):
                    diff = X[i, j] - centroids[c, j]
                    dist += diff * diff
                if dist < best:
                    best = dist
                    labels[i] = c
    return res
