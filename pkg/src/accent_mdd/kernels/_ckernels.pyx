# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled CTC lattice and edit-distance kernels."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

DEF MATCH = 0
DEF SUB = 1
DEF DEL = 2
DEF INS = 3


cdef inline double _lae(double a, double b) nogil:
    cdef double m
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log(1.0 + exp(b - a))
    return b + log(1.0 + exp(a - b))


def ctc_min_frames(labels):
    cdef list lab = list(labels)
    cdef Py_ssize_t k, rep = 0
    for k in range(1, len(lab)):
        if lab[k] == lab[k - 1]:
            rep += 1
    return len(lab) + rep


cdef cnp.ndarray _extend(cnp.int64_t[::1] labels, long blank):
    cdef Py_ssize_t L = labels.shape[0], k
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ext = np.full(2 * L + 1, blank, dtype=np.int64)
    for k in range(L):
        ext[2 * k + 1] = labels[k]
    return ext


cdef void _alpha(double[:, ::1] lp, cnp.int64_t[::1] ext, long blank, double[:, ::1] alpha) nogil:
    cdef Py_ssize_t S = lp.shape[0], n = ext.shape[0], t, s
    cdef double a
    for t in range(S):
        for s in range(n):
            alpha[t, s] = -INFINITY
    alpha[0, 0] = lp[0, ext[0]]
    if n > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, S):
        for s in range(n):
            a = alpha[t - 1, s]
            if s >= 1:
                a = _lae(a, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                a = _lae(a, alpha[t - 1, s - 2])
            if a != -INFINITY:
                alpha[t, s] = a + lp[t, ext[s]]


cdef void _beta(double[:, ::1] lp, cnp.int64_t[::1] ext, long blank, double[:, ::1] beta) nogil:
    cdef Py_ssize_t S = lp.shape[0], n = ext.shape[0], t, s
    cdef double b
    for t in range(S):
        for s in range(n):
            beta[t, s] = -INFINITY
    beta[S - 1, n - 1] = lp[S - 1, ext[n - 1]]
    if n > 1:
        beta[S - 1, n - 2] = lp[S - 1, ext[n - 2]]
    for t in range(S - 2, -1, -1):
        for s in range(n):
            b = beta[t + 1, s]
            if s + 1 < n:
                b = _lae(b, beta[t + 1, s + 1])
            if s + 2 < n and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                b = _lae(b, beta[t + 1, s + 2])
            if b != -INFINITY:
                beta[t, s] = b + lp[t, ext[s]]


def ctc_alpha(log_probs, labels, long blank):
    cdef double[:, ::1] lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    cdef cnp.int64_t[::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    ext = _extend(lab, blank)
    alpha = np.empty((lp.shape[0], ext.shape[0]), dtype=np.float64)
    _alpha(lp, ext, blank, alpha)
    return alpha


def ctc_beta(log_probs, labels, long blank):
    cdef double[:, ::1] lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    cdef cnp.int64_t[::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    ext = _extend(lab, blank)
    beta = np.empty((lp.shape[0], ext.shape[0]), dtype=np.float64)
    _beta(lp, ext, blank, beta)
    return beta


def ctc_nll_grad(log_probs, labels, long blank):
    cdef double[:, ::1] lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    cdef cnp.int64_t[::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t S = lp.shape[0], V = lp.shape[1], t, s
    grad_arr = np.zeros((S, V), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    if S < ctc_min_frames(labels):
        return INFINITY, grad_arr
    cdef cnp.int64_t[::1] ext = _extend(lab, blank)
    cdef Py_ssize_t n = ext.shape[0]
    cdef double[:, ::1] alpha = np.empty((S, n), dtype=np.float64)
    cdef double[:, ::1] beta = np.empty((S, n), dtype=np.float64)
    cdef double ll, gam
    with nogil:
        _alpha(lp, ext, blank, alpha)
        _beta(lp, ext, blank, beta)
        if n == 1:
            ll = alpha[S - 1, 0]
        else:
            ll = _lae(alpha[S - 1, n - 1], alpha[S - 1, n - 2])
        for t in range(S):
            for s in range(n):
                if alpha[t, s] != -INFINITY and beta[t, s] != -INFINITY:
                    gam = alpha[t, s] + beta[t, s] - lp[t, ext[s]] - ll
                    grad[t, ext[s]] -= exp(gam)
    return -ll, grad_arr


def edit_align(src, tgt):
    cdef cnp.int64_t[::1] a = np.ascontiguousarray(src, dtype=np.int64)
    cdef cnp.int64_t[::1] b = np.ascontiguousarray(tgt, dtype=np.int64)
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    cdef cnp.int64_t[:, ::1] D = np.empty((n + 1, m + 1), dtype=np.int64)
    cdef cnp.int64_t d
    for i in range(n + 1):
        D[i, 0] = i
    for j in range(m + 1):
        D[0, j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d = D[i - 1, j - 1] + (a[i - 1] != b[j - 1])
            if D[i - 1, j] + 1 < d:
                d = D[i - 1, j] + 1
            if D[i, j - 1] + 1 < d:
                d = D[i, j - 1] + 1
            D[i, j] = d
    ops = []
    i = n
    j = m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and a[i - 1] == b[j - 1] and D[i, j] == D[i - 1, j - 1]:
            ops.append((MATCH, i - 1, j - 1))
            i -= 1
            j -= 1
        elif i > 0 and j > 0 and D[i, j] == D[i - 1, j - 1] + 1:
            ops.append((SUB, i - 1, j - 1))
            i -= 1
            j -= 1
        elif i > 0 and D[i, j] == D[i - 1, j] + 1:
            ops.append((DEL, i - 1, -1))
            i -= 1
        else:
            ops.append((INS, -1, j - 1))
            j -= 1
    ops.reverse()
    return int(D[n, m]), ops
