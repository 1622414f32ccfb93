"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from dgrcl import _kernels
from dgrcl._kernels import _fallback


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=20), rng.normal(size=20)
    signals = rng.normal(size=(60, 80))
    x = rng.normal(size=1024)
    cases = [
        ("dtw, 20 x 20, x1000", lambda k: [k.dtw(a, b) for _ in range(1000)]),
        ("dtw_cost_matrices, 60 series, delta 20", lambda k: k.dtw_cost_matrices(signals, 20)),
        ("fft_radix2, n=1024, x200", lambda k: [k.fft_radix2(x) for _ in range(200)]),
    ]
    print(f"active backend: {_kernels.BACKEND}")
    print(f"{'kernel':<42}{'active (s)':>12}{'fallback (s)':>14}{'speedup':>10}")
    for name, fn in cases:
        fast = best_of(lambda: fn(_kernels), args.repeat)
        slow = best_of(lambda: fn(_fallback), args.repeat)
        print(f"{name:<42}{fast:>12.4f}{slow:>14.4f}{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
