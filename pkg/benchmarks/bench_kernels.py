#!/usr/bin/env python3
"""Compare the compiled matching core against the pure-NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--threads 1] [--reps 5]
"""
import argparse
import time

import numpy as np

from regionvpr import _kernels
from regionvpr._kernels import fallback


def bench(matcher, q, c, reps):
    matcher(q, c)  # warm-up (workspace allocation, BLAS init)
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        matcher(q, c)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--reps", type=int, default=5)
    args = parser.parse_args()
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(args.threads)
    except ImportError:
        pass

    rng = np.random.default_rng(0)
    print(f"compiled extension available: {_kernels.BACKEND == 'compiled'}")
    print(f"{'K':>6} {'d':>4} {'numpy (ms)':>12} {'compiled (ms)':>14} {'speedup':>8}")
    for k, d in ((100, 64), (500, 128), (1500, 128), (3500, 128)):
        q = rng.standard_normal((k, d), dtype=np.float32)
        c = rng.standard_normal((k, d), dtype=np.float32)
        ref = fallback.Matcher()
        t_ref = bench(ref, q, c, args.reps)
        if _kernels.BACKEND == "compiled":
            fast = _kernels.make_matcher()
            t_fast = bench(fast, q, c, args.reps)
            ra, ca = fast(q, c)
            rb, cb = ref(q, c)
            assert np.array_equal(ra, rb) and np.array_equal(ca, cb), \
                "backends disagree"
            print(f"{k:>6} {d:>4} {t_ref * 1e3:>12.2f} {t_fast * 1e3:>14.2f} "
                  f"{t_ref / t_fast:>7.1f}x")
        else:
            print(f"{k:>6} {d:>4} {t_ref * 1e3:>12.2f} {'n/a':>14} {'':>8}")


if __name__ == "__main__":
    main()
