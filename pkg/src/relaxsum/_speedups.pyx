# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for LCS and greedy fragment matching."""
from libc.stdint cimport int64_t
from libc.stdlib cimport malloc, free


def lcs_length(const int64_t[:] a, const int64_t[:] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0]
    cdef Py_ssize_t i, j
    cdef int64_t *prev
    cdef int64_t *cur
    cdef int64_t *tmp
    cdef int64_t best
    if n == 0 or m == 0:
        return 0
    prev = <int64_t *> malloc((m + 1) * sizeof(int64_t))
    cur = <int64_t *> malloc((m + 1) * sizeof(int64_t))
    if prev == NULL or cur == NULL:
        free(prev)
        free(cur)
        raise MemoryError()
    for j in range(m + 1):
        prev[j] = 0
    cur[0] = 0
    for i in range(n):
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
    best = prev[m]
    free(prev)
    free(cur)
    return best


def greedy_fragments(const int64_t[:] summary, const int64_t[:] document, Py_ssize_t min_len=1):
    cdef Py_ssize_t n = summary.shape[0], m = document.shape[0]
    cdef Py_ssize_t i = 0, j, k, best_len, best_start
    out = []
    while i < n:
        best_len = 0
        best_start = -1
        for j in range(m):
            k = 0
            while i + k < n and j + k < m and summary[i + k] == document[j + k]:
                k += 1
            if k > best_len:
                best_len = k
                best_start = j
        if best_len >= min_len and best_len > 0:
            out.append((i, best_start, best_len))
            i += best_len
        else:
            i += 1
    return out
