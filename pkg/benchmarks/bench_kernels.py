#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the pure-numpy fallback.

Runs each hot kernel on both backends, reports wall time per call and the
speedup, and verifies the outputs agree to near machine precision.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--size PIXELS]
"""

import argparse
import time

import numpy as np

from depthfuse.kernels import available_backends, get_impl


def timeit(fn, repeats):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(size, rng):
    img = rng.random((size, size))
    x = rng.standard_normal((2, 8, size // 2, size // 2))
    w = rng.standard_normal((16, 8, 3, 3)) * 0.1
    b = rng.standard_normal(16)

    def conv_bwd(impl):
        out = impl.conv2d_forward(x, w, b, 1, 1)
        return impl.conv2d_backward(np.ones_like(out), x, w, 1, 1)

    return [
        ("box_filter r=8", lambda impl: impl.box_filter(img, 8)),
        ("sobel", lambda impl: impl.sobel(img)),
        ("resize_bilinear 2x", lambda impl: impl.resize_bilinear(
            img, size * 2, size * 2)),
        ("conv2d forward", lambda impl: impl.conv2d_forward(x, w, b, 1, 1)),
        ("conv2d backward", conv_bwd),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--size", type=int, default=512)
    args = parser.parse_args()

    backends = available_backends()
    if "cython" not in backends:
        print("compiled backend unavailable; only timing the numpy lane")
    rng = np.random.default_rng(0)

    header = f"{'kernel':<22}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))

    for name, call in cases(args.size, rng):
        times = {}
        outs = {}
        for backend in backends:
            impl = get_impl(backend)
            times[backend] = timeit(lambda: call(impl), args.repeats)
            outs[backend] = call(impl)
        row = f"{name:<22}" + "".join(
            f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if len(backends) == 2:
            a, c = outs["numpy"], outs["cython"]
            if isinstance(a, tuple):
                agree = all(np.allclose(x, y, atol=1e-10)
                            for x, y in zip(a, c))
            else:
                agree = np.allclose(a, c, atol=1e-10)
            row += f"{times['numpy'] / times['cython']:>9.2f}x"
            if not agree:
                row += "  MISMATCH"
        print(row)


if __name__ == "__main__":
    main()
