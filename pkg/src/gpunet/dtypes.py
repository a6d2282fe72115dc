"""Engine-wide floating point precision switch.

The whole engine computes in one dtype at a time: float32 by default, float64
when callers need tight finite-difference agreement (gradient checking).  The
switch is process-global on purpose; mixing precisions inside one graph is not
supported.
"""

from contextlib import contextmanager

import numpy as np

_DTYPE = np.float32

DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
TAG_DTYPES = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


def dtype() -> np.dtype:
    """Current engine dtype (numpy dtype object)."""
    return np.dtype(_DTYPE)


def set_dtype(dt) -> None:
    """Set the engine dtype. Accepts np.float32/np.float64 or their names."""
    d = np.dtype(dt)
    if d not in DTYPE_TAGS:
        raise ValueError(f"unsupported engine dtype: {dt!r}")
    global _DTYPE
    _DTYPE = d.type


@contextmanager
def dtype_context(dt):
    """Temporarily switch the engine dtype (used by gradcheck)."""
    old = dtype()
    set_dtype(dt)
    try:
        yield
    finally:
        set_dtype(old)


def asdtype(x) -> np.ndarray:
    """Return x as a contiguous array of the engine dtype (no copy if already)."""
    return np.ascontiguousarray(x, dtype=dtype())


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=dtype())


def ones(shape) -> np.ndarray:
    return np.ones(shape, dtype=dtype())


def finfo():
    return np.finfo(dtype())
