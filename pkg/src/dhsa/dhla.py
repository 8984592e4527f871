"""The full sketch: r arrays of 2^k linear estimators plus its read-out.

One sketch is the entire per-window state: memory is fixed at
``r * 2^k * g`` bits no matter how many pairs stream through.  During a
window, every pair (candidate, opposite) sets one bit in one estimator
per array.  After the window is sealed the sketch is read in four steps:

1. estimators whose zero count dropped below ``g * exp(-theta/g)`` are
   collected per array ("hot" estimators);
2. hot index tuples are expanded stage by stage into partial host keys,
   discarding combinations whose key blocks disagree on their overlap;
3. surviving keys are verified against the forward hash and deduplicated;
4. each key's cardinality is estimated from the AND of its r estimators,
   corrected for bits contributed by co-resident hosts, and reported if
   it reaches the threshold.
"""

from __future__ import annotations

import math
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from dhsa import dhg
from dhsa._kernels import Backend, get_backend
from dhsa.errors import CapacityError, ConfigError, DataError
from dhsa.estimator import _POP8, Estimate, LinearEstimator, linear_estimate

DEFAULT_MAX_CANDIDATES = 1 << 20

_SNAP_MAGIC = b"DHLA"
_SNAP_VERSION = 1
# magic, version, r, g, k, alpha, key_width, seed_dh0, seed_h1, window_id
_SNAP_HEADER = struct.Struct("<4sHHIHHHQQQ")

_STAGE_CHUNK = 1 << 18
_EMPTY_U64 = np.empty(0, dtype=np.uint64)


def hot_threshold(g: int, theta: int) -> float:
    """Zero-count threshold below which an estimator may hold a super point."""
    return g * math.exp(-theta / g)


@dataclass(frozen=True)
class SuperPointReport:
    host: int
    estimate: float
    saturated: bool


class Dhla:
    """r * 2^k byte-packed linear estimators addressed by the hash group."""

    def __init__(self, params: dhg.DhgParams, backend: str | Backend = "auto", window_id: int = 0):
        self.params = params
        self.window_id = window_id
        self._backend = get_backend(backend)
        self.bits = np.zeros(
            (params.r, params.index_count, params.g // 8), dtype=np.uint8
        )
        assert self.bits.nbytes == params.sketch_bytes
        self._lock = threading.Lock()

    @property
    def backend_name(self) -> str:
        return self._backend.name

    @property
    def memory_bytes(self) -> int:
        return self.bits.nbytes

    # --- update phase -----------------------------------------------------

    def update(self, candidate: int, opposite: int) -> None:
        """Record one pair: one bit per array, all at h1(opposite)."""
        pos = dhg.h1(self.params, opposite)
        byte, mask = pos >> 3, np.uint8(1 << (pos & 7))
        for i, j in enumerate(dhg.forward(self.params, candidate)):
            self.bits[i, j, byte] |= mask

    def update_batch(self, candidates: np.ndarray, opposites: np.ndarray) -> None:
        """Vectorized update; safe to call from several threads at once."""
        cand = np.ascontiguousarray(candidates, dtype=np.uint32)
        opp = np.ascontiguousarray(opposites, dtype=np.uint32)
        p = self.params
        self._backend.update_batch(
            self.bits, p.state_dh0, p.state_h1, p.k, p.alpha, cand, opp,
            lock=None if self._backend.atomic else self._lock,
        )

    def reset(self, window_id: int = 0) -> None:
        self.bits[:] = 0
        self.window_id = window_id

    # --- read-out phase (window must be sealed) ----------------------------

    def zero_counts(self) -> np.ndarray:
        """Per-estimator zero-bit counts, shape (r, 2^k)."""
        return self._backend.zero_counts(self.bits)

    def estimator(self, i: int, j: int) -> LinearEstimator:
        """View (not copy) of estimator j of array i."""
        return LinearEstimator(self.params.g, self.bits[i, j])

    def hot_sets(self, theta: int, zero_counts: np.ndarray | None = None) -> list[np.ndarray]:
        """Indices of estimators that could belong to a host above theta."""
        if zero_counts is None:
            zero_counts = self.zero_counts()
        zmin = hot_threshold(self.params.g, theta)
        return [
            np.flatnonzero(zero_counts[i] < zmin).astype(np.uint64)
            for i in range(self.params.r)
        ]

    def estimate_flow_count(self, zero_counts: np.ndarray | None = None) -> Estimate:
        """Distinct-pair count seen this window, averaged over the r arrays."""
        if zero_counts is None:
            zero_counts = self.zero_counts()
        capacity = self.params.g * self.params.index_count
        per_array = [linear_estimate(int(zc), capacity) for zc in zero_counts.sum(axis=1)]
        value = sum(e.value for e in per_array) / self.params.r
        return Estimate(value, any(e.saturated for e in per_array))

    def bit_set_probability(self, flow_count: float) -> float:
        """Probability that an arbitrary sketch bit is set after that many flows."""
        if flow_count < 0:
            raise ValueError("flow count must be nonnegative")
        return 1.0 - math.exp(-flow_count / (self.params.g * self.params.index_count))

    def shared_zero_counts(self, hosts: np.ndarray) -> np.ndarray:
        """Zero count of the AND of each host's r estimators."""
        idx = dhg.forward_many(self.params, hosts).astype(np.intp)
        acc = self.bits[0][idx[:, 0]].copy()
        for i in range(1, self.params.r):
            acc &= self.bits[i][idx[:, i]]
        ones = _POP8[acc].sum(axis=1, dtype=np.int64)
        return self.params.g - ones

    def corrected_cardinality(self, host: int, psi: float) -> Estimate:
        """Cardinality of one host from its AND-combined estimators.

        Bits that co-resident hosts set in all r estimators shrink the
        observed zero count ``SZ`` below the exclusive one; dividing by
        ``1 - psi**r`` undoes that before the usual log estimate.
        """
        g = self.params.g
        sz = int(self.shared_zero_counts(np.asarray([host], dtype=np.uint64))[0])
        denom = g * (1.0 - psi ** self.params.r)
        saturated = sz == 0
        if saturated:
            sz = 1
        if sz >= denom:
            return Estimate(0.0, saturated)
        return Estimate(-g * math.log(sz / denom), saturated)

    # --- super point restoration -------------------------------------------

    def restore_superpoints(
        self,
        theta: int,
        max_candidates: int = DEFAULT_MAX_CANDIDATES,
        workers: int = 1,
    ) -> list[SuperPointReport]:
        """Rebuild and report every host whose corrected estimate reaches theta.

        Expansion cost is bounded by ``max_candidates`` partial keys per
        stage; exceeding it aborts the restore with CapacityError rather
        than silently truncating.
        """
        zc = self.zero_counts()
        hosts = self._candidate_hosts(theta, max_candidates, workers, zc)
        if len(hosts) == 0:
            return []
        flow = self.estimate_flow_count(zc)
        psi = self.bit_set_probability(flow.value)
        g, r = self.params.g, self.params.r
        sz = self.shared_zero_counts(hosts)
        denom = g * (1.0 - psi ** r)
        saturated = sz == 0
        sz = np.where(saturated, 1, sz)
        with np.errstate(divide="ignore"):
            est = -g * np.log(sz / denom)
        est = np.where(sz >= denom, 0.0, est)
        reports = [
            SuperPointReport(int(h), float(e), bool(s))
            for h, e, s in zip(hosts, est, saturated)
            if e >= theta
        ]
        reports.sort(key=lambda rep: (-rep.estimate, rep.host))
        return reports

    def _candidate_hosts(
        self,
        theta: int,
        max_candidates: int = DEFAULT_MAX_CANDIDATES,
        workers: int = 1,
        zero_counts: np.ndarray | None = None,
    ) -> np.ndarray:
        """Deduplicated, forward-verified keys rebuilt from the hot sets."""
        p = self.params
        hot = self.hot_sets(theta, zero_counts)
        if any(len(h) == 0 for h in hot):
            return np.empty(0, dtype=np.uint64)
        sub, cl0 = _stage_first(p, hot[0], hot[1], hot[2], max_candidates, workers)
        for i in range(3, p.r):
            sub, cl0 = _stage_next(p, i, sub, cl0, hot[i], max_candidates, workers)
        ok = (sub >> np.uint64(p.key_width)) == 0
        keys = sub[ok] & np.uint64((1 << p.key_width) - 1)
        cl0 = cl0[ok]
        keys = keys[dhg.dh0_many(p, keys) == cl0]
        return np.unique(keys)


# Stage expansion enumerates flat tuple indices striped across workers
# (worker w takes indices w, w + workers, ...) in bounded chunks, so
# buffer contents are independent of thread scheduling and peak memory
# stays O(chunk), not O(tuple space).


def _stripe_chunks(total: int, start: int, step: int):
    count = 0 if start >= total else (total - start + step - 1) // step
    for c0 in range(0, count, _STAGE_CHUNK):
        n = min(_STAGE_CHUNK, count - c0)
        yield np.uint64(start) + np.uint64(step) * np.arange(c0, c0 + n, dtype=np.uint64)


def _striped(total: int, workers: int, job) -> tuple[np.ndarray, np.ndarray]:
    def run_stripe(start, step):
        outs = [job(f) for f in _stripe_chunks(total, start, step)]
        subs = [o[0] for o in outs] or [_EMPTY_U64]
        anchors = [o[1] for o in outs] or [_EMPTY_U64]
        return np.concatenate(subs), np.concatenate(anchors)

    if workers <= 1 or total <= _STAGE_CHUNK:
        parts = [run_stripe(0, 1)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(run_stripe, w, workers) for w in range(workers)]
            parts = [f.result() for f in futs]
    return (
        np.concatenate([x[0] for x in parts]),
        np.concatenate([x[1] for x in parts]),
    )


def _stage_first(p, he0, he1, he2, max_candidates, workers):
    """Cross the first three hot sets into partial keys of k + alpha bits."""
    n1, n2 = len(he1), len(he2)
    total = len(he0) * n1 * n2
    omask = np.uint64((1 << (p.k - p.alpha)) - 1)
    sh_top = np.uint64(p.k - p.alpha)
    sh_alpha = np.uint64(p.alpha)

    def job(f):
        cl0 = he0[(f // np.uint64(n1 * n2)).astype(np.intp)]
        rem = f % np.uint64(n1 * n2)
        b1 = cl0 ^ he1[(rem // np.uint64(n2)).astype(np.intp)]
        b2 = cl0 ^ he2[(rem % np.uint64(n2)).astype(np.intp)]
        ok = (b1 >> sh_alpha) == (b2 & omask)
        return b1[ok] | ((b2[ok] >> sh_top) << np.uint64(p.k)), cl0[ok]

    sub, cl0 = _striped(total, workers, job)
    if len(sub) > max_candidates:
        raise CapacityError(
            f"restore stage 1 produced {len(sub)} partial keys "
            f"(max_candidates={max_candidates})"
        )
    return sub, cl0


def _stage_next(p, i, sub, cl0, he, max_candidates, workers):
    """Cross surviving partials with hot set i, appending alpha bits each."""
    nh = len(he)
    total = len(sub) * nh
    omask = np.uint64((1 << (p.k - p.alpha)) - 1)
    sh_chk = np.uint64((i - 1) * p.alpha)
    sh_top = np.uint64(p.k - p.alpha)
    sh_put = np.uint64(p.k + (i - 2) * p.alpha)

    def job(f):
        pi = (f // np.uint64(nh)).astype(np.intp)
        blk = cl0[pi] ^ he[(f % np.uint64(nh)).astype(np.intp)]
        sp = sub[pi]
        ok = (sp >> sh_chk) == (blk & omask)
        return sp[ok] | ((blk[ok] >> sh_top) << sh_put), cl0[pi][ok]

    nsub, ncl0 = _striped(total, workers, job)
    if len(nsub) > max_candidates:
        raise CapacityError(
            f"restore stage {i - 1} produced {len(nsub)} partial keys "
            f"(max_candidates={max_candidates})"
        )
    return nsub, ncl0


# --- merging and snapshots --------------------------------------------------


def merge(a: Dhla, b: Dhla) -> Dhla:
    """Union of two sketches built with identical parameters and seeds.

    Bits record observations, so merging sketches from different vantage
    points is a bitwise OR (the AND combination is only ever applied
    across one host's r estimators within a sketch).
    """
    if a.params != b.params:
        raise ConfigError(
            f"cannot merge sketches with different parameters: {a.params} vs {b.params}"
        )
    out = Dhla(a.params, backend=a._backend, window_id=a.window_id)
    np.bitwise_or(a.bits, b.bits, out=out.bits)
    return out


def write_snapshot(sketch: Dhla, dest: str | BinaryIO) -> None:
    p = sketch.params
    header = _SNAP_HEADER.pack(
        _SNAP_MAGIC, _SNAP_VERSION, p.r, p.g, p.k, p.alpha, p.key_width,
        p.seed_dh0, p.seed_h1, sketch.window_id,
    )
    if isinstance(dest, str):
        with open(dest, "wb") as fh:
            fh.write(header)
            fh.write(sketch.bits.tobytes())
    else:
        dest.write(header)
        dest.write(sketch.bits.tobytes())


def read_snapshot(src: str | BinaryIO, backend: str | Backend = "auto") -> Dhla:
    if isinstance(src, str):
        with open(src, "rb") as fh:
            return read_snapshot(fh, backend)
    raw = src.read(_SNAP_HEADER.size)
    if len(raw) < _SNAP_HEADER.size:
        raise DataError(
            f"snapshot header truncated: got {len(raw)} bytes at offset 0, "
            f"need {_SNAP_HEADER.size}"
        )
    magic, version, r, g, k, alpha, key_width, seed_dh0, seed_h1, window_id = (
        _SNAP_HEADER.unpack(raw)
    )
    if magic != _SNAP_MAGIC:
        raise DataError(f"bad snapshot magic {magic!r} at offset 0")
    if version != _SNAP_VERSION:
        raise DataError(f"unsupported snapshot version {version} at offset 4")
    try:
        params = dhg.DhgParams(
            r=r, g=g, k=k, alpha=alpha, key_width=key_width,
            seed_dh0=seed_dh0, seed_h1=seed_h1,
        )
    except ConfigError as exc:
        raise DataError(f"invalid parameters in snapshot header (offset 6): {exc}") from exc
    payload = src.read(params.sketch_bytes + 1)
    if len(payload) < params.sketch_bytes:
        raise DataError(
            f"snapshot payload truncated at offset {_SNAP_HEADER.size + len(payload)}: "
            f"expected {params.sketch_bytes} payload bytes"
        )
    if len(payload) > params.sketch_bytes:
        raise DataError(
            f"trailing data after snapshot payload at offset "
            f"{_SNAP_HEADER.size + params.sketch_bytes}"
        )
    sketch = Dhla(params, backend=backend, window_id=window_id)
    sketch.bits[:] = np.frombuffer(payload, dtype=np.uint8).reshape(sketch.bits.shape)
    return sketch
