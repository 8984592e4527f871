"""Windowed detection pipeline: batch hand-off, worker pool, window lifecycle.

Pairs flow through fixed-size batches into a pool of update workers;
because bit sets are idempotent and monotone, the sealed sketch is a pure
function of the window's pair multiset, independent of batching and
worker count.  Windows tumble on record timestamps; sealing a window is a
full barrier, after which restoration runs over the read-only sketch.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from dhsa import dhg
from dhsa.dhla import DEFAULT_MAX_CANDIDATES, Dhla, SuperPointReport
from dhsa.errors import ConfigError, SealedWindowError

DEFAULT_BATCH_PAIRS = 65536

DIRECTIONS = ("src", "dst", "both")


@dataclass(frozen=True)
class WindowConfig:
    """Everything one detection window needs."""

    dhg: dhg.DhgParams = field(default_factory=dhg.DhgParams)
    window_seconds: int = 300
    theta: int = 1024
    workers: int = 1
    batch_pairs: int = DEFAULT_BATCH_PAIRS
    direction: str = "src"
    max_candidates: int = DEFAULT_MAX_CANDIDATES

    def __post_init__(self):
        for name in ("window_seconds", "theta", "workers", "batch_pairs", "max_candidates"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive (got {getattr(self, name)})")
        if self.direction not in DIRECTIONS:
            raise ConfigError(
                f"direction must be one of {DIRECTIONS} (got {self.direction!r})"
            )


@dataclass
class WindowResult:
    window_id: int
    reports: list[SuperPointReport]
    pairs: int
    dropped: int


class WindowSession:
    """One open window: accepts batches until sealed, then restores."""

    def __init__(self, cfg: WindowConfig, window_id: int = 0,
                 backend: str = "auto", pool: ThreadPoolExecutor | None = None):
        self.cfg = cfg
        self.sketch = Dhla(cfg.dhg, backend=backend, window_id=window_id)
        self.sealed = False
        self.pairs = 0
        self.dropped = 0
        self._pool = pool
        self._futures: list = []

    def feed_batch(self, candidates: np.ndarray, opposites: np.ndarray) -> None:
        """Hand off a batch of pairs; larger inputs are split to batch size."""
        if self.sealed:
            raise SealedWindowError(
                f"window {self.sketch.window_id} is sealed; no further updates accepted"
            )
        if len(candidates) != len(opposites):
            raise ValueError("candidate and opposite arrays differ in length")
        cand = np.ascontiguousarray(candidates, dtype=np.uint32)
        opp = np.ascontiguousarray(opposites, dtype=np.uint32)
        mu = self.cfg.batch_pairs
        for s in range(0, len(cand), mu):
            c, o = cand[s : s + mu], opp[s : s + mu]
            if self._pool is None:
                self.sketch.update_batch(c, o)
            else:
                self._futures.append(self._pool.submit(self.sketch.update_batch, c, o))
        self.pairs += len(cand)

    def seal(self) -> None:
        """Barrier: wait for all in-flight batches, then freeze the window."""
        for f in self._futures:
            f.result()
        self._futures.clear()
        self.sealed = True

    def restore(self) -> list[SuperPointReport]:
        if not self.sealed:
            raise SealedWindowError("window must be sealed before restoration")
        return self.sketch.restore_superpoints(
            self.cfg.theta,
            max_candidates=self.cfg.max_candidates,
            workers=self.cfg.workers,
        )


class DetectionEngine:
    """Runs the window lifecycle over a timestamped record stream."""

    def __init__(self, cfg: WindowConfig, backend: str = "auto"):
        self.cfg = cfg
        self.backend = backend

    def run(
        self,
        records: np.ndarray | Iterable[tuple[int, int, int]],
        on_sealed: Callable[[Dhla], None] | None = None,
    ) -> list[WindowResult]:
        """Detect super points per tumbling window of the record stream.

        ``records`` is a structured array with ts/src/dst fields (see
        dhsa.ingest) or an iterable of (ts, src, dst) tuples.  Records
        older than the window being filled are dropped and counted.
        ``on_sealed`` sees each sealed sketch before its result is
        emitted (e.g. to write a snapshot).
        """
        if not isinstance(records, np.ndarray):
            from dhsa.ingest import TRACE_DTYPE

            records = np.array(list(records), dtype=TRACE_DTYPE)
        return list(self._run(records, on_sealed))

    def _run(self, records, on_sealed) -> Iterator[WindowResult]:
        cfg = self.cfg
        pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
        session: WindowSession | None = None
        try:
            chunk = max(cfg.batch_pairs, 1 << 16)
            for s in range(0, len(records), chunk):
                sub = records[s : s + chunk]
                wins = sub["ts"].astype(np.int64) // cfg.window_seconds
                # the window a record arrives DURING never moves backwards;
                # records older than it are late and get dropped
                arrival = np.maximum.accumulate(wins)
                if session is not None:
                    arrival = np.maximum(arrival, session.sketch.window_id)
                for wid in np.unique(arrival):
                    span = arrival == wid
                    on_time = span & (wins == arrival)
                    if session is not None and wid > session.sketch.window_id:
                        yield self._finish(session, on_sealed)
                        session = None
                    if session is None:
                        session = WindowSession(cfg, int(wid), self.backend, pool)
                    session.dropped += int(span.sum() - on_time.sum())
                    part = sub[on_time]
                    if len(part):
                        cand, opp = split_pairs(part, cfg.direction)
                        session.feed_batch(cand, opp)
            if session is not None:
                yield self._finish(session, on_sealed)
        finally:
            if pool is not None:
                pool.shutdown()

    @staticmethod
    def _finish(session: WindowSession, on_sealed) -> WindowResult:
        session.seal()
        if on_sealed is not None:
            on_sealed(session.sketch)
        reports = session.restore()
        return WindowResult(
            window_id=session.sketch.window_id,
            reports=reports,
            pairs=session.pairs,
            dropped=session.dropped,
        )


def split_pairs(records: np.ndarray, direction: str) -> tuple[np.ndarray, np.ndarray]:
    """(candidate, opposite) arrays for a record batch under a direction policy.

    ``src`` watches fan-out of sources, ``dst`` fan-in of destinations;
    ``both`` feeds each record in both orientations so a host's count
    covers everyone it exchanged packets with, in either role.
    """
    src = records["src"].astype(np.uint32)
    dst = records["dst"].astype(np.uint32)
    if direction == "src":
        return src, dst
    if direction == "dst":
        return dst, src
    if direction == "both":
        return np.concatenate([src, dst]), np.concatenate([dst, src])
    raise ConfigError(f"direction must be one of {DIRECTIONS} (got {direction!r})")
