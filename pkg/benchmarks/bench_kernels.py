#!/usr/bin/env python3
"""Benchmark the compiled top-k kernel against the numpy fallback.

Times the raw kernel on brute-force cosine top-k queries at a few shapes,
verifies both backends agree within 1e-12, and reports the speedup. Run:

    python benchmarks/bench_kernels.py [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

import cpknn._kernels as kernels
from cpknn._kernels import fallback

SHAPES = (
    # n_train, n_queries, d, k
    (1000, 200, 32, 10),
    (5000, 500, 64, 10),
    (5000, 1500, 64, 10),
    (20000, 500, 128, 10),
)


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    have_compiled = kernels.BACKEND == "compiled"
    if not have_compiled:
        print("compiled kernel not available; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    header = f"{'shape (n,q,d,k)':>24} {'numpy':>10} {'compiled':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for n, q, d, k in SHAPES:
        xs = unit_rows(rng, n, d)
        qs = unit_rows(rng, q, d)
        t_np = best_of(lambda: fallback.topk_distances(xs, qs, k), args.repeats)
        if have_compiled:
            t_c = best_of(lambda: kernels.topk_distances(xs, qs, k), args.repeats)
            a = kernels.topk_distances(xs, qs, k)
            b = fallback.topk_distances(xs, qs, k)
            assert np.allclose(a, b, atol=1e-12, equal_nan=True), "backend mismatch"
            print(
                f"{f'({n},{q},{d},{k})':>24} {t_np:>9.4f}s {t_c:>9.4f}s "
                f"{t_np / t_c:>7.2f}x"
            )
        else:
            print(f"{f'({n},{q},{d},{k})':>24} {t_np:>9.4f}s {'-':>10} {'-':>8}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
