"""Trace I/O, synthetic traffic with ground truth, exact oracle, metrics.

Trace file format ("IPPR"): a 14-byte header (magic ``IPPR``, u16
version, u64 record count, all little-endian) followed by 12-byte
records: u32 timestamp little-endian, then src and dst IPv4 addresses as
u32 big-endian (network order, as captures deliver them).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Optional, Sequence

import numpy as np

from dhsa.dhla import SuperPointReport
from dhsa.errors import ConfigError, DataError

TRACE_DTYPE = np.dtype([("ts", "<u4"), ("src", ">u4"), ("dst", ">u4")])

_TRACE_MAGIC = b"IPPR"
_TRACE_VERSION = 1
_TRACE_HEADER = struct.Struct("<4sHQ")


def write_trace(dest: str | BinaryIO, records: np.ndarray) -> None:
    if records.dtype != TRACE_DTYPE:
        records = records.astype(TRACE_DTYPE)
    header = _TRACE_HEADER.pack(_TRACE_MAGIC, _TRACE_VERSION, len(records))
    if isinstance(dest, str):
        with open(dest, "wb") as fh:
            fh.write(header)
            fh.write(records.tobytes())
    else:
        dest.write(header)
        dest.write(records.tobytes())


def read_trace(src: str | BinaryIO) -> np.ndarray:
    if isinstance(src, str):
        with open(src, "rb") as fh:
            return read_trace(fh)
    raw = src.read(_TRACE_HEADER.size)
    if len(raw) < _TRACE_HEADER.size:
        raise DataError(f"trace header truncated: got {len(raw)} bytes at offset 0")
    magic, version, count = _TRACE_HEADER.unpack(raw)
    if magic != _TRACE_MAGIC:
        raise DataError(f"bad trace magic {magic!r} at offset 0")
    if version != _TRACE_VERSION:
        raise DataError(f"unsupported trace version {version} at offset 4")
    payload = src.read()
    if len(payload) != count * TRACE_DTYPE.itemsize:
        raise DataError(
            f"trace payload is {len(payload)} bytes at offset {_TRACE_HEADER.size}, "
            f"header promises {count} records ({count * TRACE_DTYPE.itemsize} bytes)"
        )
    return np.frombuffer(payload, dtype=TRACE_DTYPE).copy()


# --- synthetic traffic -------------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    """Shape of one synthetic window.

    Background host cardinalities follow a truncated zipf (heavy tail,
    like aggregated core traffic); planted super points draw uniformly
    from ``super_cardinality`` inclusive.  ``duplicate_factor`` repeats
    every pair that many times (same flow, more packets).
    """

    background_hosts: int = 0
    background_max_cardinality: int = 256
    background_zipf: float = 1.5
    superpoints: int = 0
    super_cardinality: tuple[int, int] = (2048, 8192)
    duplicate_factor: int = 1
    start_ts: int = 0
    window_seconds: int = 300

    def __post_init__(self):
        if self.background_hosts < 0 or self.superpoints < 0:
            raise ConfigError("host counts must be nonnegative")
        if not 1 <= self.background_max_cardinality < 2 ** 32:
            raise ConfigError("background_max_cardinality must be in [1, 2^32)")
        lo, hi = self.super_cardinality
        if not 1 <= lo <= hi < 2 ** 32:
            raise ConfigError(f"super_cardinality range invalid: [{lo}, {hi}]")
        if self.duplicate_factor < 1:
            raise ConfigError("duplicate_factor must be >= 1")
        if self.window_seconds < 1:
            raise ConfigError("window_seconds must be >= 1")
        if self.background_zipf <= 1.0:
            raise ConfigError("background_zipf must be > 1")


def _distinct_hosts(rng: np.random.Generator, n: int) -> np.ndarray:
    """n distinct uniform 32-bit addresses."""
    hosts = np.unique(rng.integers(0, 2 ** 32, size=n + max(16, n // 64), dtype=np.uint64))
    while len(hosts) < n:
        extra = rng.integers(0, 2 ** 32, size=n, dtype=np.uint64)
        hosts = np.unique(np.concatenate([hosts, extra]))
    rng.shuffle(hosts)
    return hosts[:n]


def generate_trace(cfg: GeneratorConfig, seed: int) -> tuple[np.ndarray, dict[int, int]]:
    """One window of shuffled records plus the implied ground truth.

    Truth maps candidate host -> exact distinct-opposite count under the
    ``src`` direction policy: every generated host appears only as a
    source, with distinct destinations by construction.
    """
    rng = np.random.default_rng(seed)
    n_hosts = cfg.background_hosts + cfg.superpoints
    if n_hosts == 0:
        return np.empty(0, dtype=TRACE_DTYPE), {}
    hosts = _distinct_hosts(rng, n_hosts)
    cards = np.empty(n_hosts, dtype=np.int64)
    if cfg.background_hosts:
        cards[: cfg.background_hosts] = np.minimum(
            rng.zipf(cfg.background_zipf, size=cfg.background_hosts),
            cfg.background_max_cardinality,
        )
    if cfg.superpoints:
        lo, hi = cfg.super_cardinality
        cards[cfg.background_hosts :] = rng.integers(lo, hi + 1, size=cfg.superpoints)

    src = np.repeat(hosts, cards)
    # distinct destinations per host: a random base plus an offset ramp
    bases = rng.integers(0, 2 ** 32, size=n_hosts, dtype=np.uint64)
    offsets = np.arange(len(src), dtype=np.uint64)
    starts = np.repeat(np.cumsum(cards) - cards, cards).astype(np.uint64)
    dst = (np.repeat(bases, cards) + offsets - starts) & np.uint64(0xFFFFFFFF)

    if cfg.duplicate_factor > 1:
        src = np.tile(src, cfg.duplicate_factor)
        dst = np.tile(dst, cfg.duplicate_factor)

    records = np.empty(len(src), dtype=TRACE_DTYPE)
    records["src"] = src.astype(np.uint32)
    records["dst"] = dst.astype(np.uint32)
    records["ts"] = rng.integers(
        cfg.start_ts, cfg.start_ts + cfg.window_seconds, size=len(src), dtype=np.uint64
    ).astype(np.uint32)
    order = rng.permutation(len(records))
    records = records[order]
    records = records[np.argsort(records["ts"], kind="stable")]

    truth = {int(h): int(c) for h, c in zip(hosts, cards)}
    return records, truth


# --- exact oracle and metrics ------------------------------------------------


def exact_oracle(records: np.ndarray, direction: str = "src") -> dict[int, int]:
    """Exact distinct-opposite count per candidate host, by brute force."""
    if len(records) == 0:
        return {}
    src = records["src"].astype(np.uint64)
    dst = records["dst"].astype(np.uint64)
    if direction == "src":
        cand, opp = src, dst
    elif direction == "dst":
        cand, opp = dst, src
    elif direction == "both":
        cand = np.concatenate([src, dst])
        opp = np.concatenate([dst, src])
    else:
        raise ConfigError(f"direction must be src, dst, or both (got {direction!r})")
    pairs = np.unique((cand << np.uint64(32)) | opp)
    hosts, counts = np.unique(pairs >> np.uint64(32), return_counts=True)
    return {int(h): int(c) for h, c in zip(hosts, counts)}


@dataclass
class EvalMetrics:
    """Detection accuracy for one window.

    ``fpr`` is false reports over true super points, ``fnr`` missed super
    points over true super points, ``tfr`` their sum; all None when the
    window has no true super point (rates undefined, not zero).
    ``mean_rel_err`` averages |estimate - truth| / truth over correctly
    reported super points.
    """

    n_true: int
    n_reported: int
    n_false_pos: int
    n_false_neg: int
    fpr: Optional[float]
    fnr: Optional[float]
    tfr: Optional[float]
    mean_rel_err: Optional[float]

    def as_dict(self) -> dict:
        return {
            "N": self.n_true,
            "N_reported": self.n_reported,
            "N_false_pos": self.n_false_pos,
            "N_false_neg": self.n_false_neg,
            "fpr": self.fpr,
            "fnr": self.fnr,
            "tfr": self.tfr,
            "mean_rel_err": self.mean_rel_err,
        }


def evaluate(
    reports: Sequence[SuperPointReport],
    truth: dict[int, int],
    theta: int,
) -> EvalMetrics:
    """Score a report list against exact per-host counts."""
    true_supers = {h for h, c in truth.items() if c >= theta}
    reported = {rep.host for rep in reports}
    n = len(true_supers)
    n_fp = len(reported - true_supers)
    n_fn = len(true_supers - reported)
    rel = [
        abs(rep.estimate - truth[rep.host]) / truth[rep.host]
        for rep in reports
        if rep.host in true_supers
    ]
    mean_rel = sum(rel) / len(rel) if rel else None
    if n == 0:
        return EvalMetrics(0, len(reported), n_fp, 0, None, None, None, mean_rel)
    fpr = n_fp / n
    fnr = n_fn / n
    return EvalMetrics(n, len(reported), n_fp, n_fn, fpr, fnr, fpr + fnr, mean_rel)
