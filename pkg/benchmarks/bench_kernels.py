"""Compiled core against the numpy fallback on the two hot kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from stochqbm._kernels import _fallback

try:
    from stochqbm._kernels import _core
except ImportError:
    _core = None


def verlet_case(n=801, nb=64, seed=0):
    rng = np.random.default_rng(seed)
    mem = np.ascontiguousarray(np.tril(rng.normal(size=(n, n))) * 1e-3)
    src = rng.normal(size=(n, nb))
    x0, v0 = rng.normal(size=nb), rng.normal(size=nb)
    start = np.zeros(nb, dtype=np.int64)
    ox, ov = np.empty((n, nb)), np.empty((n, nb))

    def call(impl):
        return lambda: impl(mem, 1.0, 0.0, 0.01, src, x0, v0, start, ox, ov)

    return call


def fp_case(nx=128, npp=128):
    xs = np.linspace(-7, 7, nx)
    ps = np.linspace(-7, 7, npp)
    w = np.exp(-0.5 * xs[:, None] ** 2 - 0.5 * ps[None, :] ** 2)
    out = np.empty_like(w)

    def call(impl):
        return lambda: impl(w, xs, ps, xs[1] - xs[0], ps[1] - ps[0], 1.0, 1.0, 0.1, 0.02, 0.2, out)

    return call


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    cases = [("volterra_verlet n=801 batch=64", verlet_case(), "volterra_verlet"),
             ("fp_rhs 128x128", fp_case(), "fp_rhs")]
    print(f"{'kernel':34s} {'numpy [ms]':>12s} {'compiled [ms]':>14s} {'speed-up':>9s}")
    for label, make, name in cases:
        slow = min(timeit.repeat(make(getattr(_fallback, name)), number=1, repeat=args.repeat)) * 1e3
        if _core is None:
            print(f"{label:34s} {slow:12.2f} {'n/a':>14s} {'-':>9s}")
            continue
        fast = min(timeit.repeat(make(getattr(_core, name)), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:34s} {slow:12.2f} {fast:14.2f} {slow / fast:8.1f}x")


if __name__ == "__main__":
    main()
