# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled segment/scatter kernels (hot inner loop of message passing).

Contracts shared with the numpy backend: segment ids sorted non-decreasing,
empty segments produce zeros / -1 args, extreme ties resolve to the first
row. Sum/mean accumulate each segment's column values in ascending value
order, which makes the result a function of the value multiset only (exact
invariance under any permutation of rows within a segment) and bitwise
identical across backends.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "compiled"


cdef inline void _insertion_sort(double* buf, Py_ssize_t k) noexcept:
    cdef Py_ssize_t i, j
    cdef double key
    for i in range(1, k):
        key = buf[i]
        j = i - 1
        while j >= 0 and buf[j] > key:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = key


cdef inline double _sorted_sum(double* buf, Py_ssize_t k) noexcept:
    cdef Py_ssize_t i
    cdef double total = 0.0
    _insertion_sort(buf, k)
    for i in range(k):
        total += buf[i]
    return total


def segment_sum(double[:, ::1] src, long long[::1] ids, Py_ssize_t n):
    cdef Py_ssize_t e = src.shape[0], d = src.shape[1], i, j, start, stop
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t max_count = 0, run = 0
    for i in range(e):
        if i > 0 and ids[i] != ids[i - 1]:
            run = 0
        run += 1
        if run > max_count:
            max_count = run
    if e == 0:
        return out_arr
    scratch_arr = np.empty(max_count, dtype=np.float64)
    cdef double[::1] scratch = scratch_arr
    start = 0
    while start < e:
        stop = start
        while stop < e and ids[stop] == ids[start]:
            stop += 1
        for j in range(d):
            for i in range(start, stop):
                scratch[i - start] = src[i, j]
            out[ids[start], j] = _sorted_sum(&scratch[0], stop - start)
        start = stop
    return out_arr


def segment_mean(double[:, ::1] src, long long[::1] ids, Py_ssize_t n):
    out_arr = segment_sum(src, ids, n)
    counts_arr = np.zeros(n, dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef long long[::1] counts = counts_arr
    cdef Py_ssize_t e = src.shape[0], d = src.shape[1], i, j
    for i in range(e):
        counts[ids[i]] += 1
    for i in range(n):
        if counts[i] > 0:
            for j in range(d):
                out[i, j] /= counts[i]
    return out_arr, counts_arr


def segment_max(double[:, ::1] src, long long[::1] ids, Py_ssize_t n):
    cdef Py_ssize_t e = src.shape[0], d = src.shape[1], i, j, s
    vals_arr = np.zeros((n, d), dtype=np.float64)
    args_arr = np.full((n, d), -1, dtype=np.int64)
    cdef double[:, ::1] vals = vals_arr
    cdef long long[:, ::1] args = args_arr
    for i in range(e):
        s = ids[i]
        for j in range(d):
            if args[s, j] < 0 or src[i, j] > vals[s, j]:
                vals[s, j] = src[i, j]
                args[s, j] = i
    return vals_arr, args_arr


def segment_min(double[:, ::1] src, long long[::1] ids, Py_ssize_t n):
    cdef Py_ssize_t e = src.shape[0], d = src.shape[1], i, j, s
    vals_arr = np.zeros((n, d), dtype=np.float64)
    args_arr = np.full((n, d), -1, dtype=np.int64)
    cdef double[:, ::1] vals = vals_arr
    cdef long long[:, ::1] args = args_arr
    for i in range(e):
        s = ids[i]
        for j in range(d):
            if args[s, j] < 0 or src[i, j] < vals[s, j]:
                vals[s, j] = src[i, j]
                args[s, j] = i
    return vals_arr, args_arr


def scatter_rows(double[:, ::1] src, long long[::1] idx, Py_ssize_t n):
    cdef Py_ssize_t e = src.shape[0], d = src.shape[1], i, j
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(e):
        for j in range(d):
            out[idx[i], j] += src[i, j]
    return out_arr


def scatter_args(long long[:, ::1] args, double[:, ::1] grad, Py_ssize_t m):
    cdef Py_ssize_t n = args.shape[0], d = args.shape[1], i, j
    out_arr = np.zeros((m, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(d):
            if args[i, j] >= 0:
                out[args[i, j], j] += grad[i, j]
    return out_arr
