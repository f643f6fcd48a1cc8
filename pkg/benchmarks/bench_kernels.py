"""Time the compiled kernels against the numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel and input size with the best-of-N time of each
backend and the speedup.
"""
import argparse
import timeit

import numpy as np

from lipsort import _reference

try:
    from lipsort import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    for rows, width, k in [(64, 512, 2), (64, 512, 8), (1024, 512, 2), (64, 512, 32)]:
        z = rng.standard_normal((rows, width))
        yield f"groupsort {rows}x{width} k={k}", "groupsort", (z, k)
    for rows, width in [(256, 784), (512, 512)]:
        w = rng.standard_normal((rows, width))
        yield f"project_rows_l1 {rows}x{width}", "project_rows_l1", (w, 1.0)
    for n in (16, 64):
        a = rng.standard_normal((n, n))
        yield f"jacobi_singular_values {n}x{n}", "jacobi_singular_values", (a,)


def best_time(fn, args, repeat):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _kernels is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'case':36s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for label, name, call_args in cases(rng):
        slow = best_time(getattr(_reference, name), call_args, args.repeat)
        fast = best_time(getattr(_kernels, name), call_args, args.repeat)
        print(f"{label:36s} {slow * 1e3:10.3f} {fast * 1e3:12.3f} {slow / fast:7.1f}x")


if __name__ == "__main__":
    main()
