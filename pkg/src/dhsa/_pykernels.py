"""NumPy implementations of the hot kernels.

Used when the compiled extension is unavailable (or forced via
``DHSA_BACKEND=python``).  Must produce bit-identical sketches to the
compiled kernels.  Concurrent callers pass a lock: the read-modify-write
bit application is not atomic at the NumPy level, so it is serialized;
the hash computation stays outside the lock.
"""

from __future__ import annotations

import numpy as np

from dhsa.estimator import _BIT8, _POP8

_U = np.uint64


def _mix64(x):
    with np.errstate(over="ignore"):
        x ^= x >> _U(30)
        x *= _U(0xBF58476D1CE4E5B9)
        x ^= x >> _U(27)
        x *= _U(0x94D049BB133111EB)
        x ^= x >> _U(31)
    return x


def update_batch(bits, state_dh0, state_h1, k, alpha, cand, opp, lock=None):
    """Apply one batch of (candidate, opposite) pairs to the sketch bits.

    bits: (r, 2^k, g/8) uint8, C-contiguous.
    """
    r = bits.shape[0]
    g = bits.shape[2] * 8
    kmask = _U((1 << k) - 1)
    a = cand.astype(np.uint64)
    h1v = _mix64(opp.astype(np.uint64) ^ _U(state_h1)) & _U(g - 1)
    d0 = _mix64(a.copy() ^ _U(state_dh0)) & kmask
    byte_idx = (h1v >> _U(3)).astype(np.intp)
    bitmask = _BIT8[(h1v & _U(7)).astype(np.intp)]
    rows = np.empty((r, len(a)), dtype=np.intp)
    rows[0] = d0
    for i in range(1, r):
        rows[i] = (((a >> _U((i - 1) * alpha)) & kmask) ^ d0).astype(np.intp)
    if lock is None:
        _apply(bits, rows, byte_idx, bitmask)
    else:
        with lock:
            _apply(bits, rows, byte_idx, bitmask)


def _apply(bits, rows, byte_idx, bitmask):
    for i in range(bits.shape[0]):
        np.bitwise_or.at(bits[i], (rows[i], byte_idx), bitmask)


def zero_counts(bits):
    """Zero-bit count of every estimator, shape (r, 2^k)."""
    g = bits.shape[2] * 8
    ones = _POP8[bits].sum(axis=2, dtype=np.int64)
    return g - ones
