"""Benchmark the pairwise mean-closest-point kernels: numba vs pure numpy.

Usage: python3 benchmarks/bench_kernels.py [--sizes 200,500,1000] [--points 15]
"""

import argparse
import time

import numpy as np

from tractoform import backends


def fiber_set(n, points, seed):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 60, (n, 3))
    t = np.linspace(0, 1, points)[None, :, None]
    ends = centers + rng.normal(0, 5, (n, 3)) + np.array([0, 80, 0])
    return np.ascontiguousarray(centers[:, None, :] * (1 - t) + ends[:, None, :] * t)


def time_call(fn, *args, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="200,500,1000")
    parser.add_argument("--points", type=int, default=15)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    results = {}
    for backend in ("numba", "numpy"):
        backends.set_backend(backend)
        k = backends.kernels()
        k.warmup()
        rows = []
        for n in sizes:
            pts = fiber_set(n, args.points, seed=0)
            half = fiber_set(max(1, n // 2), args.points, seed=1)
            t_sym = time_call(k.mcp_matrix_sym, pts, repeats=args.repeats)
            t_rect = time_call(k.mcp_matrix_rect, pts, half, repeats=args.repeats)
            rows.append((n, t_sym, t_rect))
        results[backend] = rows

    print(f"{'n':>6} {'kernel':>10} {'numba (s)':>12} {'numpy (s)':>12} {'speedup':>9}")
    for i, n in enumerate(sizes):
        for j, name in ((1, "sym"), (2, "rect")):
            tb = results["numba"][i][j]
            tp = results["numpy"][i][j]
            print(f"{n:>6} {name:>10} {tb:>12.4f} {tp:>12.4f} {tp / tb:>8.1f}x")

    # backends must agree numerically
    pts = fiber_set(64, args.points, seed=2)
    backends.set_backend("numba")
    a = backends.kernels().mcp_matrix_sym(pts)
    backends.set_backend("numpy")
    b = backends.kernels().mcp_matrix_sym(pts)
    print(f"max |numba - numpy| on 64x64 check: {np.abs(a - b).max():.2e}")


if __name__ == "__main__":
    main()
