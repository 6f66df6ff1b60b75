# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled brute-force nearest-neighbor search for 3D point sets.

This is the hot kernel behind the Chamfer distance: an exact O(Na*Nb) scan
that returns, for every point of `a`, the squared distance to and index of
its nearest point in `b`. Ties pick the lowest index, matching the NumPy
fallback bit for bit.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def nearest_neighbors(double[:, ::1] a, double[:, ::1] b):
    """For each row of a (Na,3), nearest row of b (Nb,3).

    Returns (d2, idx): squared distances (Na,) float64 and argmin indices
    (Na,) int64.
    """
    cdef Py_ssize_t na = a.shape[0]
    cdef Py_ssize_t nb = b.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] d2 = np.empty(na, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.empty(na, dtype=np.int64)
    cdef double[::1] d2v = d2
    cdef long long[::1] idxv = idx
    cdef Py_ssize_t i, j, best_j
    cdef double ax, ay, az, dx, dy, dz, d, best

    for i in range(na):
        ax = a[i, 0]
        ay = a[i, 1]
        az = a[i, 2]
        best = np.inf
        best_j = 0
        for j in range(nb):
            dx = ax - b[j, 0]
            dy = ay - b[j, 1]
            dz = az - b[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
                best_j = j
        d2v[i] = best
        idxv[i] = best_j
    return d2, idx
