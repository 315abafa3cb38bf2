"""Benchmark the numba kernels against their numpy fallbacks.

Reports seconds per call for the ReLU posterior moments and for building
and applying Householder reflectors.  Run with ``python benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from rigamp import _kernels


def _time(fn, repeats):
    fn()  # warm-up (triggers JIT compilation)
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def main() -> None:
    parser = argparse.ArgumentParser(description="numba vs numpy kernel timings")
    parser.add_argument("--n", type=int, default=1_000_000, help="posterior batch size")
    parser.add_argument("--dim", type=int, default=1000, help="orthogonal matrix size")
    parser.add_argument("--cols", type=int, default=20, help="columns per reflector product")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    r0, r1 = rng.normal(0, 2, (2, args.n))
    s0, s1 = 10 ** rng.uniform(-2, 1, (2, args.n))
    z = rng.standard_normal((args.dim, args.dim))
    x = rng.standard_normal((args.dim, args.cols))
    refl = _kernels.build_reflectors(z)

    cases = {
        "relu_posterior": (
            lambda: _kernels._relu_posterior_np(r0, s0, r1, s1),
            lambda: _kernels.relu_posterior_moments(r0, s0, r1, s1),
        ),
        "build_reflectors": (
            lambda: _kernels._build_reflectors_np(z),
            lambda: _kernels.build_reflectors(z),
        ),
        "apply_reflectors": (
            lambda: _kernels._apply_reflectors_np(*refl, x, False),
            lambda: _kernels.apply_reflectors(*refl, x),
        ),
    }

    print(f"backend={_kernels.backend()} n={args.n} dim={args.dim} cols={args.cols}")
    print(f"{'kernel':<18} {'numpy_s':>10} {'active_s':>10} {'speedup':>8}")
    for name, (slow, fast) in cases.items():
        t_np = _time(slow, args.repeats)
        t_fast = _time(fast, args.repeats)
        print(f"{name:<18} {t_np:>10.4f} {t_fast:>10.4f} {t_np / t_fast:>8.2f}")


if __name__ == "__main__":
    main()
