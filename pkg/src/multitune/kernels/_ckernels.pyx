# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: LCS length and BPE pair merging."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def lcs_length(const long long[:] a, const long long[:] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    if n == 0 or m == 0:
        return 0
    cdef long long[:] prev = np.zeros(m + 1, dtype=np.int64)
    cdef long long[:] cur = np.zeros(m + 1, dtype=np.int64)
    cdef long long[:] tmp
    for i in range(n):
        cur[0] = 0
        for j in range(m):
            if a[i] == b[j]:
                cur[j + 1] = prev[j] + 1
            elif prev[j + 1] >= cur[j]:
                cur[j + 1] = prev[j + 1]
            else:
                cur[j + 1] = cur[j]
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])


def merge_pair(const int[:] seq, int left, int right, int new):
    cdef Py_ssize_t n = seq.shape[0], i = 0, k = 0
    out_arr = np.empty(n, dtype=np.int32)
    cdef int[:] out = out_arr
    while i < n:
        if i + 1 < n and seq[i] == left and seq[i + 1] == right:
            out[k] = new
            i += 2
        else:
            out[k] = seq[i]
            i += 1
        k += 1
    return out_arr[:k]
