"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_accel.py [--n 2000] [--d 2] [--repeat 5]

Kernel timings call both implementations directly; the end-to-end row runs
a full self-transport solve in a subprocess per path, selected with
CO2_DISABLE_NUMBA.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from co2coreset import _accel

SOLVE = """
import time, numpy as np
from co2coreset import PointCloud, uniform, self_plan
X = np.random.default_rng(0).normal(size=({n}, {d}))
mu = uniform(PointCloud(X))
self_plan(mu, 1.0)  # compile / warm up
t = time.perf_counter()
self_plan(mu, 1.0)
print(time.perf_counter() - t)
"""


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    if not _accel.HAVE_NUMBA:
        sys.exit("numba is not installed")

    rng = np.random.default_rng(0)
    X = rng.normal(size=(args.n, args.d))
    C = _accel.sqdist_numpy(X, X)
    f = rng.normal(size=args.n)
    logw = np.full(args.n, -np.log(args.n))
    a = np.full(args.n, 1.0 / args.n)

    cases = {
        "sqdist": (lambda: _accel.sqdist_numba(X, X), lambda: _accel.sqdist_numpy(X, X)),
        # C is symmetric, so it doubles as its own transpose here
        "softmin": (lambda: _accel.softmin_numba(C, f, logw, 1.0),
                    lambda: _accel.softmin_numpy(C, f, logw, 1.0)),
        "plan": (lambda: _accel.self_plan_numba(C, f, a, 1.0),
                 lambda: _accel.self_plan_numpy(C, f, a, 1.0)),
    }
    print(f"n={args.n} d={args.d}  best of {args.repeat}, seconds")
    print(f"{'kernel':<12}{'numba':>10}{'numpy':>10}{'speedup':>10}")
    for name, (nb, npy) in cases.items():
        nb()  # compile
        t_nb, t_np = best(nb, args.repeat), best(npy, args.repeat)
        print(f"{name:<12}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>10.2f}")

    times = []
    for flag in ("0", "1"):
        env = dict(os.environ, CO2_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", SOLVE.format(n=args.n, d=args.d)],
                             capture_output=True, text=True, env=env, check=True)
        times.append(float(out.stdout.strip()))
    print(f"{'self_plan':<12}{times[0]:>10.4f}{times[1]:>10.4f}{times[1] / times[0]:>10.2f}")


if __name__ == "__main__":
    main()
