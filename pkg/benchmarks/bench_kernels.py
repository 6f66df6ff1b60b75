"""Benchmark the compiled nearest-neighbor kernel against the NumPy fallback.

The kernel dominates Chamfer-loss evaluation, the hottest operation in
training. Run after building the extension:

    python benchmarks/bench_kernels.py
"""
import time

import numpy as np

from sctrack import kernels
from sctrack.kernels import _fallback

SIZES = [(128, 128), (512, 512), (2048, 2048), (4096, 2048)]
REPEATS = 5


def time_impl(fn, a, b):
    fn(a, b)  # warmup
    best = float("inf")
    for _ in range(REPEATS):
        start = time.perf_counter()
        fn(a, b)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"compiled kernel available: {kernels.HAVE_NATIVE}")
    print(f"{'size':>14} {'fallback':>12} {'native':>12} {'speedup':>9}")
    for na, nb in SIZES:
        a = rng.normal(size=(na, 3))
        b = rng.normal(size=(nb, 3))
        t_fb = time_impl(_fallback.nearest_neighbors, a, b)
        row = f"{na:>6} x {nb:<5} {t_fb * 1e3:>10.2f}ms"
        if kernels.HAVE_NATIVE:
            from sctrack.kernels import _native

            a_c = np.ascontiguousarray(a)
            b_c = np.ascontiguousarray(b)
            t_nat = time_impl(_native.nearest_neighbors, a_c, b_c)
            row += f" {t_nat * 1e3:>10.2f}ms {t_fb / t_nat:>8.1f}x"
        else:
            row += f" {'n/a':>12} {'n/a':>9}"
        print(row)

    # the composite operation the tracker actually pays for
    a = rng.normal(size=(2048, 3))
    b = rng.normal(size=(2048, 3))

    def chamfer_with(fn):
        d_ab, _ = fn(a, b)
        d_ba, _ = fn(b, a)
        return d_ab.sum() + d_ba.sum()

    t_fb = time_impl(lambda x, y: chamfer_with(_fallback.nearest_neighbors), a, b)
    print(f"\nchamfer 2048x2048 fallback: {t_fb * 1e3:.2f}ms")
    if kernels.HAVE_NATIVE:
        from sctrack.kernels import _native

        t_nat = time_impl(lambda x, y: chamfer_with(_native.nearest_neighbors), a, b)
        print(f"chamfer 2048x2048 native:   {t_nat * 1e3:.2f}ms ({t_fb / t_nat:.1f}x)")


if __name__ == "__main__":
    main()
