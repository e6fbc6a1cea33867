# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Every function here has a numpy twin in _fallback.py."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.stdint cimport int8_t, int32_t, int64_t, uint8_t, uint64_t

cnp.import_array()

cdef extern from *:
    """
    static inline int ba_popcount64(unsigned long long x) { return __builtin_popcountll(x); }
    """
    int ba_popcount64(unsigned long long x) nogil

cdef enum:
    ROW_TILE = 16
    COL_TILE = 64


cdef inline uint64_t _tail_mask(Py_ssize_t d) nogil:
    cdef Py_ssize_t r = d % 64
    if r == 0:
        return <uint64_t>0xFFFFFFFFFFFFFFFF
    return (<uint64_t>1 << r) - 1


def pack_signs(const double[:, ::1] m):
    cdef Py_ssize_t n = m.shape[0], d = m.shape[1]
    cdef Py_ssize_t w = (d + 63) // 64
    out = np.zeros((n, w), dtype=np.uint64)
    cdef uint64_t[:, ::1] o = out
    cdef Py_ssize_t i, c
    with nogil:
        for i in range(n):
            for c in range(d):
                if m[i, c] >= 0.0:
                    o[i, c >> 6] |= (<uint64_t>1) << (c & 63)
    return out


cdef inline int _hamming(const uint64_t[:, ::1] a, Py_ssize_t i,
                         const uint64_t[:, ::1] b, Py_ssize_t j,
                         Py_ssize_t nw, uint64_t mask) nogil:
    cdef int h = 0
    cdef Py_ssize_t w
    for w in range(nw - 1):
        h += ba_popcount64(a[i, w] ^ b[j, w])
    h += ba_popcount64((a[i, nw - 1] ^ b[j, nw - 1]) & mask)
    return h


def hamming_rows(const uint64_t[:, ::1] a, Py_ssize_t i,
                 const uint64_t[:, ::1] b, Py_ssize_t j, Py_ssize_t d):
    return _hamming(a, i, b, j, a.shape[1], _tail_mask(d))


cdef void _gemm_tile(const uint64_t[:, ::1] s, const uint64_t[:, ::1] t,
                     int32_t[:, ::1] o, Py_ssize_t i0, Py_ssize_t d,
                     uint64_t mask) noexcept nogil:
    cdef Py_ssize_t n = s.shape[0], m = t.shape[0], nw = s.shape[1]
    cdef Py_ssize_t i1 = i0 + ROW_TILE
    cdef Py_ssize_t j0, j1, i, j
    if i1 > n:
        i1 = n
    j0 = 0
    while j0 < m:
        j1 = j0 + COL_TILE
        if j1 > m:
            j1 = m
        for i in range(i0, i1):
            for j in range(j0, j1):
                o[i, j] = <int32_t>(d - 2 * _hamming(s, i, t, j, nw, mask))
        j0 = j1


def binary_gemm(const uint64_t[:, ::1] s, const uint64_t[:, ::1] t, Py_ssize_t d,
                int nthreads=1):
    """out[i, j] = d - 2 * popcount(s_i XOR t_j), rows tiled for cache reuse."""
    cdef Py_ssize_t n = s.shape[0], m = t.shape[0]
    out = np.empty((n, m), dtype=np.int32)
    cdef int32_t[:, ::1] o = out
    cdef uint64_t mask = _tail_mask(d)
    cdef Py_ssize_t nt = (n + ROW_TILE - 1) // ROW_TILE
    cdef Py_ssize_t b
    if nthreads < 1:
        nthreads = 1
    if n == 0 or m == 0:
        return out
    for b in prange(nt, nogil=True, num_threads=nthreads, schedule="static"):
        _gemm_tile(s, t, o, b * ROW_TILE, d, mask)
    return out


def naive_f32_gemm(const float[:, ::1] a, const float[:, ::1] b):
    """out = a @ b.T with a plain triple loop, float32 accumulation."""
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    out = np.empty((n, m), dtype=np.float32)
    cdef float[:, ::1] o = out
    cdef Py_ssize_t i, j, k
    cdef float acc
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    acc = acc + a[i, k] * b[j, k]
                o[i, j] = acc
    return out


def u8s8_matmul(const uint8_t[:, ::1] p, const int8_t[:, ::1] v):
    """Integer product of uint8 coefficients (n x k) and int8 values (k x d)."""
    cdef Py_ssize_t n = p.shape[0], kk = p.shape[1], d = v.shape[1]
    out = np.zeros((n, d), dtype=np.int32)
    cdef int32_t[:, ::1] o = out
    cdef Py_ssize_t i, k, c
    cdef int32_t w
    with nogil:
        for i in range(n):
            for k in range(kk):
                w = p[i, k]
                if w == 0:
                    continue
                for c in range(d):
                    o[i, c] += w * v[k, c]
    return out


def f64_matmul(const double[:, ::1] a, const double[:, ::1] b):
    """Plain i-k-j real64 product with a fixed summation order."""
    cdef Py_ssize_t n = a.shape[0], kk = a.shape[1], d = b.shape[1]
    out = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, k, c
    cdef double w
    with nogil:
        for i in range(n):
            for k in range(kk):
                w = a[i, k]
                for c in range(d):
                    o[i, c] += w * b[k, c]
    return out
