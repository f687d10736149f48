"""Benchmark the numba kernels against the pure-numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--size 192] [--repeats 3]

Covers the three hot kernels: connected-component labeling, label-pair
counting (the joint pass behind IoU matching) and box dilation. The numba
backend is warmed up once so JIT compilation is not billed to the timings.
"""

import argparse
import time

import numpy as np

from ribeval import _kernels


def make_inputs(size, rng):
    blob = rng.random((size, size, size))
    mask = (blob < 0.08).astype(np.uint8)  # sparse bone-like foreground
    a = np.zeros((size, size, size), dtype=np.int32)
    b = np.zeros((size, size, size), dtype=np.int32)
    for i in range(1, 11):
        lo = rng.integers(0, size - 16, size=3)
        a[lo[0]:lo[0] + 16, lo[1]:lo[1] + 16, lo[2]:lo[2] + 16] = i
        lo = rng.integers(0, size - 16, size=3)
        b[lo[0]:lo[0] + 16, lo[1]:lo[1] + 16, lo[2]:lo[2] + 16] = i
    return mask, a, b


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--size", type=int, default=192, help="volume edge length")
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    mask, a, b = make_inputs(args.size, rng)
    nvox = mask.size

    cases = [
        ("label_components(26)", lambda: _kernels.label_components(mask, 26)),
        ("label_components(6)", lambda: _kernels.label_components(mask, 6)),
        ("pair_counts", lambda: _kernels.pair_counts(a, b, 10, 10)),
        ("dilate(r=2)", lambda: _kernels.dilate(mask, 2)),
        ("dilate(r=8)", lambda: _kernels.dilate(mask, 8)),
    ]

    # warm up the JIT so compilation does not pollute the numba timings
    _kernels.set_backend("numba")
    tiny = np.zeros((8, 8, 8), dtype=np.uint8)
    tiny[0, 0, 0] = 1
    _kernels.label_components(tiny, 26)
    _kernels.label_components(tiny, 6)
    _kernels.pair_counts(tiny.astype(np.int32), tiny.astype(np.int32), 1, 1)
    _kernels.dilate(tiny, 2)
    _kernels.dilate(tiny, 8)

    print(f"volume {args.size}^3 = {nvox / 1e6:.1f}M voxels, "
          f"foreground {mask.sum() / 1e6:.2f}M, best of {args.repeats}")
    print(f"{'kernel':<22}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name, fn in cases:
        _kernels.set_backend("numba")
        t_numba = best_of(fn, args.repeats)
        _kernels.set_backend("numpy")
        t_numpy = best_of(fn, args.repeats)
        print(f"{name:<22}{t_numba:>12.4f}{t_numpy:>12.4f}{t_numpy / t_numba:>9.1f}x")
    _kernels.set_backend("numba")


if __name__ == "__main__":
    main()
