"""Fixed-memory super point detection from IP-pair streams.

The sketch records every (candidate, opposite) pair in r arrays of
linear estimators addressed by a reversible hash group, so hosts whose
per-window fan-out crosses a threshold can be rebuilt from the sketch
alone and their cardinalities estimated with a sharing correction.
"""

from dhsa._kernels import available_backends, get_backend
from dhsa.dhg import DhgParams
from dhsa.dhla import Dhla, SuperPointReport, merge, read_snapshot, write_snapshot
from dhsa.engine import DetectionEngine, WindowConfig, WindowResult
from dhsa.errors import CapacityError, ConfigError, DataError, DhsaError, SealedWindowError
from dhsa.estimator import Estimate, LinearEstimator
from dhsa.ingest import (
    EvalMetrics,
    GeneratorConfig,
    evaluate,
    exact_oracle,
    generate_trace,
    read_trace,
    write_trace,
)

__version__ = "0.1.0"

__all__ = [
    "available_backends",
    "get_backend",
    "DhgParams",
    "Dhla",
    "SuperPointReport",
    "merge",
    "read_snapshot",
    "write_snapshot",
    "DetectionEngine",
    "WindowConfig",
    "WindowResult",
    "CapacityError",
    "ConfigError",
    "DataError",
    "DhsaError",
    "SealedWindowError",
    "Estimate",
    "LinearEstimator",
    "EvalMetrics",
    "GeneratorConfig",
    "evaluate",
    "exact_oracle",
    "generate_trace",
    "read_trace",
    "write_trace",
]
