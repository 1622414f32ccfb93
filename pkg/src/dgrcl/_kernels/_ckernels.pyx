# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled DTW and radix-2 FFT kernels.

Arithmetic order matches the pure-Python fallback exactly (local cost is
added to the best predecessor), so both back ends return bit-identical
DTW costs.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY, cos, sin, M_PI

cnp.import_array()


cdef double _dtw(const double[:] a, const double[:] b, Py_ssize_t band,
                 double* prev, double* cur) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0]
    cdef Py_ssize_t i, j, lo, hi
    cdef double best, c
    cdef double* tmp
    for j in range(m):
        prev[j] = INFINITY
    for i in range(n):
        for j in range(m):
            cur[j] = INFINITY
        lo = 0
        hi = m
        if band >= 0:
            lo = i - band if i - band > 0 else 0
            hi = i + band + 1 if i + band + 1 < m else m
        for j in range(lo, hi):
            c = fabs(a[i] - b[j])
            if i == 0 and j == 0:
                cur[j] = c
                continue
            best = INFINITY
            if i > 0 and prev[j] < best:
                best = prev[j]
            if j > 0 and cur[j - 1] < best:
                best = cur[j - 1]
            if i > 0 and j > 0 and prev[j - 1] < best:
                best = prev[j - 1]
            cur[j] = c + best
        tmp = prev
        prev = cur
        cur = tmp
    return prev[m - 1]


def dtw(double[:] a, double[:] b, Py_ssize_t band=-1):
    cdef Py_ssize_t m = b.shape[0]
    cdef double[:] buf = np.empty(2 * m, dtype=np.float64)
    cdef double out
    with nogil:
        out = _dtw(a, b, band, &buf[0], &buf[m])
    return out


def dtw_cost_matrices(double[:, :] signals, Py_ssize_t delta, Py_ssize_t band=-1):
    """Costs for every window of length ``delta``: array (steps, N, N)."""
    cdef Py_ssize_t n = signals.shape[0], length = signals.shape[1]
    cdef Py_ssize_t steps = length - delta + 1
    out_arr = np.zeros((steps, n, n), dtype=np.float64)
    cdef double[:, :, :] out = out_arr
    cdef double[:] buf = np.empty(2 * delta, dtype=np.float64)
    cdef Py_ssize_t s, i, j
    cdef double c
    with nogil:
        for s in range(steps):
            for i in range(n):
                for j in range(i + 1, n):
                    c = _dtw(signals[i, s:s + delta], signals[j, s:s + delta],
                             band, &buf[0], &buf[delta])
                    out[s, i, j] = c
                    out[s, j, i] = c
    return out_arr


def fft_radix2(x):
    """In-order iterative radix-2 FFT of a power-of-two length complex array."""
    arr = np.array(x, dtype=np.complex128)
    cdef double complex[:] v = arr
    cdef Py_ssize_t n = v.shape[0]
    if n & (n - 1):
        raise ValueError("length must be a power of two")
    cdef Py_ssize_t i, j, bit, length, half, k
    cdef double complex w, wl, u, t
    cdef double ang
    j = 0
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j ^= bit
        if i < j:
            u = v[i]
            v[i] = v[j]
            v[j] = u
    length = 2
    while length <= n:
        half = length // 2
        for i in range(0, n, length):
            for k in range(half):
                ang = -2.0 * M_PI * k / length
                w = cos(ang) + 1j * sin(ang)
                u = v[i + k]
                t = w * v[i + k + half]
                v[i + k] = u + t
                v[i + k + half] = u - t
        length <<= 1
    return arr
