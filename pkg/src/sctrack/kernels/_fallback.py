"""Pure-NumPy nearest-neighbor search, used when the compiled kernel is absent.

Computes exact squared differences in row chunks so memory stays bounded at
chunk * Nb * 3 doubles. Argmin takes the first minimum, the same tie rule as
the compiled kernel.
"""
import numpy as np

_CHUNK = 256


def nearest_neighbors(a, b):
    """For each row of a (Na,3), nearest row of b (Nb,3).

    Returns (d2, idx): squared distances (Na,) float64 and argmin indices
    (Na,) int64.
    """
    na = a.shape[0]
    d2 = np.empty(na, dtype=np.float64)
    idx = np.empty(na, dtype=np.int64)
    for start in range(0, na, _CHUNK):
        stop = min(start + _CHUNK, na)
        diff = a[start:stop, None, :] - b[None, :, :]
        # summed term by term to match the compiled kernel's rounding exactly
        dist = diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2 + diff[:, :, 2] ** 2
        j = dist.argmin(axis=1)
        d2[start:stop] = dist[np.arange(stop - start), j]
        idx[start:stop] = j
    return d2, idx
