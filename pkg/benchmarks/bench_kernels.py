"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both paths are called in-process through the ``use_numba`` argument, so the
env flag does not need to be set. The first numba call (JIT compile or cache
load) is excluded from the timings.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from activetrial import _kernels
from activetrial._accel import USE_NUMBA


def cases(rng):
    X = rng.uniform(-1, 1, (800, 2))
    R = rng.standard_normal(800)
    Q = rng.uniform(-1, 1, (256, 2))
    D = _kernels.coordinate_sq_diffs(rng.uniform(-1, 1, (400, 3)))
    return {
        "bandwidth_nw n=800 q=256": lambda u: _kernels.bandwidth_nw(X, R, Q, 1.0, 1.0, use_numba=u),
        "nw_fixed n=800 q=256": lambda u: _kernels.nw_fixed(X, R, Q, 0.2, use_numba=u),
        "ard_gram n=400 p=3": lambda u: _kernels.ard_gram(D, np.array([0.5, 1.0, 2.0]), 1.0, 0.1, use_numba=u),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=10)
    args = ap.parse_args(argv)
    if not USE_NUMBA:
        print("numba path disabled (ACTIVETRIAL_DISABLE_NUMBA set or numba missing); timing numpy only")
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, fn in cases(np.random.default_rng(0)).items():
        t_np = min(timeit.repeat(lambda: fn(False), number=args.number, repeat=args.repeat)) / args.number
        if USE_NUMBA:
            fn(True)
            t_nb = min(timeit.repeat(lambda: fn(True), number=args.number, repeat=args.repeat)) / args.number
            print(f"{name:28s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:7.1f}x")
        else:
            print(f"{name:28s} {1e3 * t_np:10.3f} {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
