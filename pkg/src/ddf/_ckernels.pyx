# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror ``ddf._pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log1p, pow, floor, fabs

cnp.import_array()


def nearest_codes(const double[:, ::1] z, const double[:, ::1] codebook):
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1], k = codebook.shape[0]
    cdef Py_ssize_t i, j, m, best
    cdef double dist, diff, best_dist
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] idx = out
    with nogil:
        for i in range(n):
            best = 0
            best_dist = 0.0
            for j in range(k):
                dist = 0.0
                for m in range(d):
                    diff = z[i, m] - codebook[j, m]
                    dist = dist + diff * diff
                # strict < keeps the lowest index on ties
                if j == 0 or dist < best_dist:
                    best_dist = dist
                    best = j
            idx[i] = best
    return out


def levenshtein(const cnp.int64_t[::1] a, const cnp.int64_t[::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    cdef cnp.int64_t sub, ins, dele, best
    prev_arr = np.arange(m + 1, dtype=np.int64)
    cur_arr = np.empty(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] prev = prev_arr
    cdef cnp.int64_t[::1] cur = cur_arr
    cdef cnp.int64_t[::1] tmp
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if a[i - 1] == b[j - 1] else 1)
            dele = prev[j] + 1
            ins = cur[j - 1] + 1
            best = sub
            if dele < best:
                best = dele
            if ins < best:
                best = ins
            cur[j] = best
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])


def mu_law_encode(const double[::1] x, int bits):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.int64_t levels = 1 << bits
    cdef double mu = <double>(levels - 1)
    cdef double denom = log1p(mu)
    cdef double v, y
    cdef cnp.int64_t c
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] codes = out
    with nogil:
        for i in range(n):
            v = x[i]
            if v > 1.0:
                v = 1.0
            elif v < -1.0:
                v = -1.0
            y = log1p(mu * fabs(v)) / denom
            if v < 0:
                y = -y
            c = <cnp.int64_t>floor((y + 1.0) * 0.5 * levels)
            if c > levels - 1:
                c = levels - 1
            elif c < 0:
                c = 0
            codes[i] = c
    return out


def mu_law_decode(const cnp.int64_t[::1] codes, int bits):
    cdef Py_ssize_t n = codes.shape[0], i
    cdef cnp.int64_t levels = 1 << bits
    cdef double mu = <double>(levels - 1)
    cdef double y, mag
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] x = out
    with nogil:
        for i in range(n):
            y = 2.0 * (codes[i] + 0.5) / levels - 1.0
            mag = (pow(1.0 + mu, fabs(y)) - 1.0) / mu
            x[i] = -mag if y < 0 else mag
    return out


def overlap_add(const double[:, ::1] frames, Py_ssize_t hop):
    cdef Py_ssize_t t = frames.shape[0], w = frames.shape[1], i, j, start
    out = np.zeros(hop * (t - 1) + w if t > 0 else 0, dtype=np.float64)
    cdef double[::1] y = out
    with nogil:
        for i in range(t):
            start = i * hop
            for j in range(w):
                y[start + j] += frames[i, j]
    return out


def chroma_fold(const double[:, ::1] power, const cnp.int64_t[::1] bin_class, int n_classes):
    cdef Py_ssize_t t = power.shape[0], f = power.shape[1], i, j
    cdef cnp.int64_t c
    out = np.zeros((t, n_classes), dtype=np.float64)
    cdef double[:, ::1] acc = out
    with nogil:
        for i in range(t):
            for j in range(f):
                c = bin_class[j]
                if c >= 0:
                    acc[i, c] += power[i, j]
    return out
