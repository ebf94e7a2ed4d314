# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-round kernels (see ``_kernels_py`` for the reference versions)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log

cnp.import_array()


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) nogil:
    # four independent accumulators so the reduction pipelines
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t j = 0
    while j + 4 <= n:
        s0 += a[j] * b[j]
        s1 += a[j + 1] * b[j + 1]
        s2 += a[j + 2] * b[j + 2]
        s3 += a[j + 3] * b[j + 3]
        j += 4
    while j < n:
        s0 += a[j] * b[j]
        j += 1
    return (s0 + s1) + (s2 + s3)


def woodbury_quadform(const double[:, ::1] S, const double[::1] H, double c,
                      const double[:, ::1] X):
    cdef Py_ssize_t K = X.shape[0], l = S.shape[0], d = S.shape[1]
    cdef Py_ssize_t i, k
    cdef double xx, proj, acc, q
    out = np.empty(K)
    cdef double[::1] q_out = out
    if K == 0 or d == 0:
        out[:] = 0.0
        return out
    with nogil:
        for k in range(K):
            xx = _dot(&X[k, 0], &X[k, 0], d)
            acc = 0.0
            for i in range(l):
                proj = _dot(&S[i, 0], &X[k, 0], d)
                acc = acc + H[i] * proj * proj
            q = (xx - acc) / c
            q_out[k] = q if q > 0.0 else 0.0
    return out


def ucb_scores(const double[::1] theta, const double[:, ::1] S, const double[::1] H,
               double c, double beta, const double[:, ::1] X):
    cdef Py_ssize_t K = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t k
    q = woodbury_quadform(S, H, c, X)
    cdef double[::1] qv = q
    if d == 0:
        return q
    with nogil:
        for k in range(K):
            qv[k] = _dot(&X[k, 0], &theta[0], d) + beta * sqrt(qv[k])
    return q


def dense_ucb_scores(const double[::1] theta, const double[:, ::1] Vinv, double beta,
                     const double[:, ::1] X):
    cdef Py_ssize_t K = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t k, i
    cdef double q
    out = np.empty(K)
    cdef double[::1] o = out
    if d == 0:
        out[:] = 0.0
        return out
    with nogil:
        for k in range(K):
            q = 0.0
            for i in range(d):
                q = q + X[k, i] * _dot(&Vinv[i, 0], &X[k, 0], d)
            if q < 0.0:
                q = 0.0
            o[k] = _dot(&X[k, 0], &theta[0], d) + beta * sqrt(q)
    return out


def logdet_from_singvals(const double[::1] sv, double c, Py_ssize_t d):
    cdef Py_ssize_t i, n = sv.shape[0]
    cdef double acc = (d - n) * log(c)
    for i in range(n):
        acc += log(sv[i] * sv[i] + c)
    return acc


def shrink_rows(const double[::1] s, const double[:, ::1] Vt, double delta, Py_ssize_t l):
    cdef Py_ssize_t d = Vt.shape[1]
    cdef Py_ssize_t k = min(l, s.shape[0])
    cdef Py_ssize_t i, j
    cdef double w
    out = np.zeros((l, d))
    cdef double[:, ::1] o = out
    for i in range(k):
        w = s[i] * s[i] - delta
        w = sqrt(w) if w > 0.0 else 0.0
        if w == 0.0:
            continue
        for j in range(d):
            o[i, j] = w * Vt[i, j]
    return out
