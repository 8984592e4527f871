"""Backend selection: compiled extension if present, NumPy fallback otherwise.

``DHSA_BACKEND=python`` (or ``compiled``) overrides the default choice;
an explicit ``backend=`` argument beats the environment.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable

from dhsa import _pykernels
from dhsa.errors import ConfigError

try:
    from dhsa import _core
except ImportError:
    _core = None


@dataclass(frozen=True)
class Backend:
    name: str
    update_batch: Callable
    zero_counts: Callable
    atomic: bool  # True: concurrent update_batch calls need no external lock


_PYTHON = Backend("python", _pykernels.update_batch, _pykernels.zero_counts, atomic=False)
_COMPILED = (
    Backend("compiled", _core.update_batch, _core.zero_counts, atomic=True)
    if _core is not None
    else None
)


def available_backends() -> tuple[str, ...]:
    return ("compiled", "python") if _COMPILED is not None else ("python",)


def get_backend(name: str | Backend = "auto") -> Backend:
    if isinstance(name, Backend):
        return name
    if name == "auto":
        name = os.environ.get("DHSA_BACKEND", "auto")
    if name == "auto":
        return _COMPILED if _COMPILED is not None else _PYTHON
    if name == "python":
        return _PYTHON
    if name == "compiled":
        if _COMPILED is None:
            raise ConfigError("compiled backend requested but dhsa._core is not built")
        return _COMPILED
    raise ConfigError(f"unknown backend {name!r}; expected auto, compiled, or python")
