# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled tree kernels; mirrors ``_slow`` result for result."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

cdef enum:
    NUM_CLASSES = 3


def best_split(const double[:, :] X, const cnp.intp_t[:] y, idx, features,
               Py_ssize_t min_samples_leaf):
    cdef cnp.intp_t[:] sidx = np.ascontiguousarray(idx, dtype=np.intp)
    cdef Py_ssize_t m = sidx.shape[0]
    cdef long long total[NUM_CLASSES]
    cdef long long lc[NUM_CLASSES]
    cdef long long rc[NUM_CLASSES]
    cdef Py_ssize_t i, c, nl, nr
    cdef long long sl, sr, ssum
    cdef double score, parent, best_s, best_t, lo, hi, t
    cdef Py_ssize_t best_f = -1
    cdef cnp.intp_t f, yi
    cdef double[:] v = np.empty(m, dtype=np.float64)
    cdef double[:] vs = np.empty(m, dtype=np.float64)
    cdef cnp.intp_t[:] order
    cdef cnp.intp_t[:] feats = np.ascontiguousarray(features, dtype=np.intp)
    cdef Py_ssize_t k

    for c in range(NUM_CLASSES):
        total[c] = 0
    for i in range(m):
        total[y[sidx[i]]] += 1
    ssum = 0
    for c in range(NUM_CLASSES):
        ssum += total[c] * total[c]
    parent = <double>ssum / m
    best_s = parent + 1e-12 * m
    best_t = 0.0
    if m < 2 * min_samples_leaf:
        return -1, 0.0, best_s

    for k in range(feats.shape[0]):
        f = feats[k]
        for i in range(m):
            v[i] = X[sidx[i], f]
        order = np.argsort(np.asarray(v), kind="stable")
        for i in range(m):
            vs[i] = v[order[i]]
        for c in range(NUM_CLASSES):
            lc[c] = 0
        for i in range(m - 1):
            yi = y[sidx[order[i]]]
            lc[yi] += 1
            if vs[i] == vs[i + 1]:
                continue
            nl = i + 1
            nr = m - nl
            if nl < min_samples_leaf or nr < min_samples_leaf:
                continue
            sl = 0
            sr = 0
            for c in range(NUM_CLASSES):
                sl += lc[c] * lc[c]
                sr += (total[c] - lc[c]) * (total[c] - lc[c])
            score = <double>sl / nl + <double>sr / nr
            if score > best_s:
                lo = vs[i]
                hi = vs[i + 1]
                t = (lo + hi) / 2.0
                if t == hi:
                    t = lo
                best_f = f
                best_t = t
                best_s = score
    return int(best_f), float(best_t), float(best_s)


def apply_tree(const cnp.intp_t[:] feature, const double[:] threshold,
               const cnp.intp_t[:] left, const cnp.intp_t[:] right,
               const double[:, :] X):
    cdef Py_ssize_t n = X.shape[0]
    cdef cnp.intp_t[:] out = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t i
    cdef cnp.intp_t node
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return np.asarray(out)
