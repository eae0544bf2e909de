#!/usr/bin/env python3
"""Timing comparison of the numpy reference kernels vs the compiled extension.

Runs the hot kernels (bilinear warp and its gradient, patch extraction,
per-pixel filtering and its backward pass) at full-frame size and prints a
speedup table.

    python3 benchmarks/bench_kernels.py [--size 640x480] [--repeats 5]
"""

import argparse
import time

import numpy as np

from toflab.backend import available_backends, kernels_for


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def build_cases(h, w):
    rng = np.random.default_rng(0)
    img = np.ascontiguousarray(rng.uniform(size=(h, w, 1)))
    u = np.ascontiguousarray(rng.uniform(-3, 3, size=(h, w)))
    v = np.ascontiguousarray(rng.uniform(-3, 3, size=(h, w)))
    depth = np.ascontiguousarray(rng.uniform(0.5, 4.0, size=(h, w)))
    weights = np.ascontiguousarray(rng.standard_normal((h, w, 9)))
    bias = np.ascontiguousarray(rng.uniform(-0.5, 0.5, size=(h, w)))
    grad = np.ascontiguousarray(rng.standard_normal((h, w)))

    def cases(k):
        return {
            "bilinear_warp": lambda: k.bilinear_warp(img, u, v),
            "warp_gradient": lambda: k.bilinear_warp_gradient(img, u, v),
            "extract_patches": lambda: k.extract_patches(depth, 3),
            "kpn_apply": lambda: k.kpn_apply(depth, weights, bias, 1, 1),
            "kpn_apply_vjp": lambda: k.kpn_apply_vjp(depth, weights, bias, 1, 1, grad),
        }

    return cases


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", default="640x480")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    w, h = (int(t) for t in args.size.split("x"))

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the numpy reference only")
    cases = build_cases(h, w)
    timings = {name: {} for name in cases(kernels_for("python"))}
    for backend in backends:
        for name, fn in cases(kernels_for(backend)).items():
            timings[name][backend] = best_of(fn, args.repeats)

    print(f"\nkernel timings at {w}x{h} (best of {args.repeats})")
    header = f"{'kernel':<18} {'python':>10}"
    if "compiled" in backends:
        header += f" {'compiled':>10} {'speedup':>8}"
    print(header)
    for name, by_backend in timings.items():
        row = f"{name:<18} {by_backend['python'] * 1e3:>8.2f}ms"
        if "compiled" in by_backend:
            speedup = by_backend["python"] / by_backend["compiled"]
            row += f" {by_backend['compiled'] * 1e3:>8.2f}ms {speedup:>7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
