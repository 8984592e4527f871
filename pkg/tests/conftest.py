import numpy as np
import pytest

from dhsa._kernels import available_backends
from dhsa.dhg import DhgParams


@pytest.fixture
def params():
    """Published defaults: g=1024, r=5, alpha=6, k=14."""
    return DhgParams()


@pytest.fixture
def toy_params():
    """Reduced width so reconstruction is exhaustively checkable."""
    return DhgParams(r=4, g=64, k=8, alpha=4, key_width=16)


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param


def distinct_pairs(n, seed):
    """n distinct (candidate, opposite) pairs; mix64 is bijective, so
    mixing distinct 64-bit inputs yields distinct pairs."""
    from dhsa.dhg import mix64_many

    mixed = mix64_many(np.arange(n, dtype=np.uint64) ^ np.uint64(seed << 34))
    return (
        (mixed >> np.uint64(32)).astype(np.uint32),
        (mixed & np.uint64(0xFFFFFFFF)).astype(np.uint32),
    )
