"""g-bit linear estimator: bit insertion, zero counting, cardinality math.

An estimator is a byte-packed bit vector: bit ``b`` lives at bit ``b % 8``
of byte ``b // 8``.  The layout is part of the snapshot format, so both
backends and all platforms must agree on it.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from dhsa.errors import ConfigError

_POP8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)
_BIT8 = np.array([1 << i for i in range(8)], dtype=np.uint8)


class Estimate(NamedTuple):
    value: float
    saturated: bool


def linear_estimate(zero_count: int, capacity: int) -> Estimate:
    """Distinct-count estimate from the zero bits of a capacity-bit vector.

    A full vector (zero_count == 0) is out of the estimator's range; it is
    evaluated at one zero bit and flagged saturated.
    """
    saturated = zero_count == 0
    z = 1 if saturated else zero_count
    return Estimate(-capacity * math.log(z / capacity), saturated)


class LinearEstimator:
    """Fixed-size bit vector recording hashed opposite hosts."""

    __slots__ = ("g", "bits")

    def __init__(self, g: int, bits: np.ndarray | None = None):
        if g < 8 or g & (g - 1):
            raise ConfigError(f"g must be a power of two >= 8 (got g={g})")
        self.g = g
        if bits is None:
            bits = np.zeros(g // 8, dtype=np.uint8)
        elif bits.dtype != np.uint8 or bits.shape != (g // 8,):
            raise ConfigError(f"bits must be a uint8 vector of {g // 8} bytes")
        self.bits = bits

    def insert(self, opposite_hash: int) -> None:
        """Set the bit at a hashed position; idempotent."""
        if not 0 <= opposite_hash < self.g:
            raise ValueError(f"bit index {opposite_hash} out of range [0, {self.g})")
        self.bits[opposite_hash >> 3] |= _BIT8[opposite_hash & 7]

    def one_count(self) -> int:
        return int(_POP8[self.bits].sum())

    def zero_count(self) -> int:
        return self.g - self.one_count()

    def raw_estimate(self) -> Estimate:
        return linear_estimate(self.zero_count(), self.g)

    def intersect(self, other: "LinearEstimator") -> "LinearEstimator":
        """Bitwise AND; used to strip bits set only by co-resident hosts."""
        self._check_compatible(other)
        return LinearEstimator(self.g, self.bits & other.bits)

    def union(self, other: "LinearEstimator") -> "LinearEstimator":
        """Bitwise OR; merging two estimators of the same stream split."""
        self._check_compatible(other)
        return LinearEstimator(self.g, self.bits | other.bits)

    def copy(self) -> "LinearEstimator":
        return LinearEstimator(self.g, self.bits.copy())

    def _check_compatible(self, other: "LinearEstimator") -> None:
        if self.g != other.g:
            raise ConfigError(f"estimator sizes differ: g={self.g} vs g={other.g}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, LinearEstimator):
            return NotImplemented
        return self.g == other.g and bool(np.array_equal(self.bits, other.bits))

    def __repr__(self) -> str:
        return f"LinearEstimator(g={self.g}, ones={self.one_count()})"
