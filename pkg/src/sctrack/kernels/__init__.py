"""Nearest-neighbor kernels with a compiled fast path.

At import time the Cython extension is preferred; without it (or with
SCTRACK_PURE_PYTHON=1 in the environment) the NumPy fallback is used.
Both implementations return bit-identical results; `benchmarks/bench_kernels.py`
compares their speed.
"""
import os

import numpy as np

from ..errors import DimensionError, EmptyInputError
from . import _fallback

if os.environ.get("SCTRACK_PURE_PYTHON"):
    _impl = _fallback
    HAVE_NATIVE = False
else:
    try:
        from . import _native as _impl

        HAVE_NATIVE = True
    except ImportError:
        _impl = _fallback
        HAVE_NATIVE = False


def _as_points(x, name):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise DimensionError(f"{name} must have shape (N, 3), got {x.shape}")
    return x


def nearest_neighbors(a, b):
    """Squared distance and index of the nearest point of `b` per point of `a`.

    Parameters
    ----------
    a, b : array-like, shape (Na, 3) / (Nb, 3)

    Returns
    -------
    (d2, idx) : float64 (Na,), int64 (Na,)
    """
    a = _as_points(a, "a")
    b = _as_points(b, "b")
    if b.shape[0] == 0:
        raise EmptyInputError("nearest_neighbors: reference cloud b is empty")
    return _impl.nearest_neighbors(a, b)
