"""Double-direction hash group: forward host-to-index mapping and its inverse.

A host key (an IPv4 address as a ``key_width``-bit integer) is mapped to
``r`` estimator indices, one per estimator array.  Index 0 comes from a
seeded mixing hash; index ``i >= 1`` is a k-bit block of the key starting
at bit ``(i-1)*alpha``, XOR-masked with index 0.  Because XOR is an
involution, any key whose indices are all known can be rebuilt from them:
``index_0 XOR index_i`` recovers block ``i``, and the blocks overlap by
``k - alpha`` bits, which both stitches them together and filters out
index tuples that do not belong to a single key.

A second independent hash ``h1`` maps the opposite host of a pair to a
bit position inside an estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from dhsa.errors import ConfigError

_MASK64 = (1 << 64) - 1

# Domain-separation tags so the two hash directions stay independent even
# if a caller passes equal seed values.
_DH0_TAG = 0x9E3779B97F4A7C15
_H1_TAG = 0xD1B54A32D192ED03

DEFAULT_SEED_DH0 = 0x243F6A8885A308D3
DEFAULT_SEED_H1 = 0x13198A2E03707344


def mix64(x: int) -> int:
    """64-bit finalizer (splitmix64): bijective, strong avalanche."""
    x &= _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def mix64_many(x: np.ndarray) -> np.ndarray:
    """Vectorized :func:`mix64` over a uint64 array."""
    x = x.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        x ^= x >> np.uint64(30)
        x *= np.uint64(0xBF58476D1CE4E5B9)
        x ^= x >> np.uint64(27)
        x *= np.uint64(0x94D049BB133111EB)
        x ^= x >> np.uint64(31)
    return x


@dataclass(frozen=True)
class DhgParams:
    """Shape and seeding of the hash group and its estimator arrays.

    r      number of estimator arrays (and of hash functions)
    g      bits per linear estimator (power of two, >= 8)
    k      log2 of the number of estimators per array
    alpha  stride in bits between consecutive key blocks
    key_width  bits in a host key (32 for IPv4)
    """

    r: int = 5
    g: int = 1024
    k: int = 14
    alpha: int = 6
    key_width: int = 32
    seed_dh0: int = DEFAULT_SEED_DH0
    seed_h1: int = DEFAULT_SEED_H1

    def __post_init__(self):
        r, g, k, a, w = self.r, self.g, self.k, self.alpha, self.key_width
        if r < 3:
            raise ConfigError(f"r must satisfy r >= 3 (got r={r})")
        if g < 8 or g & (g - 1):
            raise ConfigError(
                f"g must be a power of two >= 8 for byte-packed estimators (got g={g})"
            )
        if not 1 <= k <= 30:
            raise ConfigError(f"k must satisfy 1 <= k <= 30 (got k={k})")
        if not 8 <= w <= 32:
            raise ConfigError(f"key_width must satisfy 8 <= key_width <= 32 (got {w})")
        if k > w:
            raise ConfigError(f"k must satisfy k <= key_width (got k={k}, key_width={w})")
        if not 1 <= a <= k:
            raise ConfigError(f"alpha must satisfy 1 <= alpha <= k (got alpha={a}, k={k})")
        if (r - 2) * a + k < w:
            raise ConfigError(
                f"block coverage must satisfy (r-2)*alpha + k >= key_width "
                f"(got ({r}-2)*{a}+{k}={(r - 2) * a + k} < {w})"
            )
        if (r - 2) * a + k > 64:
            raise ConfigError(
                f"partial keys are staged in 64-bit words: (r-2)*alpha + k <= 64 "
                f"(got {(r - 2) * a + k})"
            )
        if not 0 <= self.seed_dh0 <= _MASK64 or not 0 <= self.seed_h1 <= _MASK64:
            raise ConfigError("seeds must be unsigned 64-bit integers")

    @property
    def index_count(self) -> int:
        """Estimators per array, 2**k."""
        return 1 << self.k

    @property
    def state_dh0(self) -> int:
        return mix64(self.seed_dh0 ^ _DH0_TAG)

    @property
    def state_h1(self) -> int:
        return mix64(self.seed_h1 ^ _H1_TAG)

    @property
    def sketch_bytes(self) -> int:
        """Exact payload size of one sketch: r * 2^k * g / 8 bytes."""
        return self.r * self.index_count * (self.g // 8)


def dh0(params: DhgParams, a: int) -> int:
    """Seeded mixing hash of a candidate host into [0, 2^k)."""
    return mix64(params.state_dh0 ^ a) & (params.index_count - 1)


def dh_i(params: DhgParams, a: int, i: int) -> int:
    """Index of host ``a`` in array ``i`` (1 <= i <= r-1).

    The k-bit key block starting at bit (i-1)*alpha, XORed with dh0(a).
    """
    if not 1 <= i <= params.r - 1:
        raise ValueError(f"array index i must be in [1, {params.r - 1}], got {i}")
    block = (a >> ((i - 1) * params.alpha)) & (params.index_count - 1)
    return block ^ dh0(params, a)


def h1(params: DhgParams, b: int) -> int:
    """Seeded hash of an opposite host into a bit position [0, g)."""
    return mix64(params.state_h1 ^ b) & (params.g - 1)


def recover_block(params: DhgParams, cl0: int, cli: int) -> int:
    """Undo the XOR mask: the key block carried by index ``cli``."""
    return cl0 ^ cli


def forward(params: DhgParams, a: int) -> tuple[int, ...]:
    """All r estimator indices of host ``a``: (dh0, dh_1, ..., dh_{r-1})."""
    d0 = dh0(params, a)
    kmask = params.index_count - 1
    return (d0,) + tuple(
        ((a >> ((i - 1) * params.alpha)) & kmask) ^ d0 for i in range(1, params.r)
    )


def reconstruct_key(params: DhgParams, indices: Sequence[int]) -> Optional[int]:
    """Rebuild the host key from its r indices, or None if they are inconsistent.

    Consistency requires every pair of neighboring blocks to agree on their
    k-alpha overlapping bits, any block bits beyond the key width to be
    zero, and dh0 of the rebuilt key to reproduce index 0.
    """
    r, k, a_, w = params.r, params.k, params.alpha, params.key_width
    if len(indices) != r:
        raise ValueError(f"expected {r} indices, got {len(indices)}")
    cl0 = indices[0]
    omask = (1 << (k - a_)) - 1
    blk = cl0 ^ indices[1]
    key = blk
    for i in range(2, r):
        nxt = cl0 ^ indices[i]
        if (blk >> a_) != (nxt & omask):
            return None
        key |= (nxt >> (k - a_)) << (k + (i - 2) * a_)
        blk = nxt
    if key >> w:
        return None
    if dh0(params, key) != cl0:
        return None
    return key


# --- vectorized variants (uint64 arrays) ---------------------------------


def dh0_many(params: DhgParams, keys: np.ndarray) -> np.ndarray:
    out = mix64_many(keys.astype(np.uint64) ^ np.uint64(params.state_dh0))
    return out & np.uint64(params.index_count - 1)


def h1_many(params: DhgParams, keys: np.ndarray) -> np.ndarray:
    out = mix64_many(keys.astype(np.uint64) ^ np.uint64(params.state_h1))
    return out & np.uint64(params.g - 1)


def forward_many(params: DhgParams, keys: np.ndarray) -> np.ndarray:
    """Estimator indices for a batch of keys, shape (len(keys), r)."""
    a = keys.astype(np.uint64)
    kmask = np.uint64(params.index_count - 1)
    out = np.empty((len(a), params.r), dtype=np.uint64)
    d0 = dh0_many(params, a)
    out[:, 0] = d0
    for i in range(1, params.r):
        out[:, i] = ((a >> np.uint64((i - 1) * params.alpha)) & kmask) ^ d0
    return out


def reconstruct_many(params: DhgParams, tuples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`reconstruct_key` over an (n, r) index matrix.

    Returns (keys, ok): rebuilt keys (garbage where not ok) and a boolean
    acceptance mask.
    """
    r, k, a_, w = params.r, params.k, params.alpha, params.key_width
    t = tuples.astype(np.uint64)
    cl0 = t[:, 0]
    omask = np.uint64((1 << (k - a_)) - 1)
    blk = cl0 ^ t[:, 1]
    key = blk.copy()
    ok = np.ones(len(t), dtype=bool)
    for i in range(2, r):
        nxt = cl0 ^ t[:, i]
        ok &= (blk >> np.uint64(a_)) == (nxt & omask)
        key |= (nxt >> np.uint64(k - a_)) << np.uint64(k + (i - 2) * a_)
        blk = nxt
    ok &= (key >> np.uint64(w)) == 0
    ok &= dh0_many(params, key) == cl0
    return key, ok
