"""Benchmark the non-domination kernel: numba @njit vs pure numpy.

Usage: python benchmarks/bench_pareto.py [--sizes 200,1000,4000] [--repeats 5]

The numba path is what LLEMA_NUMBA=auto/1 selects when numba imports; the
numpy path is the LLEMA_NUMBA=0 fallback. Both produce identical masks
(asserted per size before timing).
"""

import argparse
import time

import numpy as np

from llema._accel import _build_numba_kernel, nondominated_mask_numpy


def time_fn(fn, x, y, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(x, y)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="200,1000,4000,8000")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    try:
        numba_kernel = _build_numba_kernel()
    except ImportError:
        numba_kernel = None
        print("numba not importable; benchmarking numpy path only")

    rng = np.random.default_rng(args.seed)
    if numba_kernel is not None:
        warm = rng.uniform(-1, 1, size=8)
        numba_kernel(warm, warm)  # JIT compile outside the timed region

    header = f"{'n':>8} {'numpy (ms)':>12}"
    if numba_kernel is not None:
        header += f" {'numba (ms)':>12} {'speedup':>9}"
    print(header)
    for n in sizes:
        x = rng.uniform(-5.0, 5.0, size=n)
        y = rng.uniform(-5.0, 5.0, size=n)
        if numba_kernel is not None:
            assert np.array_equal(numba_kernel(x, y), nondominated_mask_numpy(x, y))
        t_np = time_fn(nondominated_mask_numpy, x, y, args.repeats)
        line = f"{n:>8} {t_np * 1e3:>12.3f}"
        if numba_kernel is not None:
            t_nb = time_fn(numba_kernel, x, y, args.repeats)
            line += f" {t_nb * 1e3:>12.3f} {t_np / t_nb:>8.1f}x"
        print(line)


if __name__ == "__main__":
    main()
