"""Time the compiled and numpy kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--n 2000] [--d 16] [--repeat 3]

Prints one line per (kernel, backend) with the best wall time and the
speed-up of the compiled core over the fallback.
"""
import argparse
import time

import numpy as np

from uvcl import _backend
from uvcl.kde import MeanShiftConfig, find_modes


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--clusters", type=int, default=5)
    p.add_argument("--h", type=float, default=1.5)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    centers = rng.normal(scale=10.0, size=(args.clusters, args.d))
    data = centers[rng.integers(args.clusters, size=args.n)] + rng.normal(size=(args.n, args.d))
    cfg = MeanShiftConfig()
    eps = cfg.eps_for(args.h)

    cases = {
        "kde_density_many": lambda k: k.kde_density_many(data, data, args.h),
        "mean_shift_seeds": lambda k: k.mean_shift_seeds(data, data, args.h, eps, cfg.max_iterations),
        "nearest_rows": lambda k: k.nearest_rows(data, centers),
    }
    names = sorted(_backend.BACKENDS)
    print(f"n={args.n} d={args.d} h={args.h} backends={names}")
    for case, fn in cases.items():
        t = {b: _best(lambda: fn(_backend.BACKENDS[b]), args.repeat) for b in names}
        for b in names:
            print(f"{case:<18} {b:<7} {t[b] * 1e3:10.2f} ms")
        if "cython" in t:
            print(f"{case:<18} speed-up {t['python'] / t['cython']:8.2f}x")

    prev = _backend.NAME
    for b in names:
        _backend.use(b)
        tm = _best(lambda: find_modes(data, args.h, cfg), args.repeat)
        print(f"{'find_modes':<18} {b:<7} {tm * 1e3:10.2f} ms")
    _backend.use(prev)


if __name__ == "__main__":
    main()
