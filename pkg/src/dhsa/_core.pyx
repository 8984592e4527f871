# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: per-pair sketch update and per-estimator popcount.

The update loop runs without the GIL and sets bits with an atomic OR, so
any number of threads may update one sketch concurrently; the final bit
pattern is the same union regardless of scheduling.  Hashing here must
stay bit-identical to dhsa._pykernels / dhsa.dhg.
"""

import numpy as np


cdef extern from *:
    """
    #include <stdint.h>

    static inline void dhsa_atomic_or_u8(uint8_t *p, uint8_t v) {
    #if defined(__GNUC__) || defined(__clang__)
        __atomic_fetch_or(p, v, __ATOMIC_RELAXED);
    #else
        *p |= v;
    #endif
    }

    static inline int dhsa_popcount64(uint64_t x) {
    #if defined(__GNUC__) || defined(__clang__)
        return __builtin_popcountll(x);
    #else
        int c = 0;
        while (x) { x &= x - 1; c++; }
        return c;
    #endif
    }

    static inline uint64_t dhsa_mix64(uint64_t z) {
        z ^= z >> 30; z *= 0xBF58476D1CE4E5B9ULL;
        z ^= z >> 27; z *= 0x94D049BB133111EBULL;
        z ^= z >> 31;
        return z;
    }
    """
    void dhsa_atomic_or_u8(unsigned char *p, unsigned char v) nogil
    int dhsa_popcount64(unsigned long long x) nogil
    unsigned long long dhsa_mix64(unsigned long long z) nogil


def mix64(unsigned long long z):
    """Scalar mixer, exposed for cross-backend parity tests."""
    return dhsa_mix64(z)


def update_batch(unsigned char[:, :, ::1] bits,
                 unsigned long long state_dh0,
                 unsigned long long state_h1,
                 int k, int alpha,
                 const unsigned int[::1] cand,
                 const unsigned int[::1] opp,
                 lock=None):
    """Apply one batch of (candidate, opposite) pairs to the sketch bits.

    ``lock`` is accepted for signature compatibility with the NumPy
    backend and ignored: the bit sets are atomic.
    """
    cdef Py_ssize_t n = cand.shape[0]
    cdef int r = <int> bits.shape[0]
    cdef unsigned long long g = <unsigned long long> bits.shape[2] * 8
    cdef unsigned long long kmask = ((<unsigned long long> 1) << k) - 1
    cdef unsigned long long gmask = g - 1
    cdef unsigned long long a, d0, h
    cdef Py_ssize_t byte_idx, t
    cdef unsigned char mask
    cdef int i
    if opp.shape[0] != n:
        raise ValueError("candidate and opposite arrays differ in length")
    with nogil:
        for t in range(n):
            a = cand[t]
            h = dhsa_mix64(state_h1 ^ opp[t]) & gmask
            d0 = dhsa_mix64(state_dh0 ^ a) & kmask
            byte_idx = <Py_ssize_t> (h >> 3)
            mask = <unsigned char> (1 << (h & 7))
            dhsa_atomic_or_u8(&bits[0, <Py_ssize_t> d0, byte_idx], mask)
            for i in range(1, r):
                dhsa_atomic_or_u8(
                    &bits[i, <Py_ssize_t> (((a >> ((i - 1) * alpha)) & kmask) ^ d0), byte_idx],
                    mask)


def zero_counts(const unsigned char[:, :, ::1] bits):
    """Zero-bit count of every estimator, shape (r, 2^k)."""
    cdef Py_ssize_t r = bits.shape[0]
    cdef Py_ssize_t m = bits.shape[1]
    cdef Py_ssize_t bpe = bits.shape[2]
    cdef long long g = <long long> bpe * 8
    out = np.empty((r, m), dtype=np.int64)
    cdef long long[:, ::1] ov = out
    cdef Py_ssize_t i, j, q
    cdef long long ones
    cdef const unsigned long long *wp
    cdef const unsigned char *bp
    with nogil:
        if bpe % 8 == 0:
            for i in range(r):
                for j in range(m):
                    wp = <const unsigned long long *> &bits[i, j, 0]
                    ones = 0
                    for q in range(bpe // 8):
                        ones += dhsa_popcount64(wp[q])
                    ov[i, j] = g - ones
        else:
            for i in range(r):
                for j in range(m):
                    bp = &bits[i, j, 0]
                    ones = 0
                    for q in range(bpe):
                        ones += dhsa_popcount64(<unsigned long long> bp[q])
                    ov[i, j] = g - ones
    return out
