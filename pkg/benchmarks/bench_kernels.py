"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--paths M] [--n N] [--repeat R]

Each kernel is run on identical inputs under both backends; the table reports
best-of-R wall time, the speedup and the max absolute difference of outputs.
"""

import argparse
import time

import numpy as np

from fraceuler._backend import available, get_kernels
from fraceuler.schemes import linear_2d


def _inputs(paths, n, seed):
    rng = np.random.default_rng(seed)
    system = linear_2d()
    co = system.linear
    dt = 1.0 / n
    dB = rng.standard_normal((paths, system.m, n)) * dt ** 0.7
    x0 = np.ones((paths, system.d))
    C = sum(co.S[j] @ co.S[j] for j in range(system.m))
    bi = np.concatenate([np.zeros((paths, 1)), np.cumsum(rng.standard_normal((paths, n)), 1)], 1)
    bj = np.concatenate([np.zeros((paths, 1)), np.cumsum(rng.standard_normal((paths, n)), 1)], 1)
    return {
        "affine_scheme": lambda k: k.affine_scheme(x0, dB, dt, co.A, co.a, co.S, co.s, 0.5 * dt ** 1.4),
        "linear_variational": lambda k: k.linear_variational(dB, dt, co.A, co.S, C, 0.5 * dt ** 1.4),
        "zeta_offdiag": lambda k: k.zeta_offdiag(bi, bj, 16, True),
    }


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--paths", type=int, default=2000)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if "cython" not in available():
        print("compiled kernels unavailable; only the fallback can be timed")
    backends = available()
    cases = _inputs(args.paths, args.n, 0)
    print(f"paths={args.paths} n={args.n} repeat={args.repeat}")
    print(f"{'kernel':<20}" + "".join(f"{b + ' [s]':>14}" for b in backends)
          + f"{'speedup':>10}{'max |diff|':>13}")
    for name, call in cases.items():
        times, outs = [], []
        for b in backends:
            k = get_kernels(b)
            t, out = _best(lambda: call(k), args.repeat)
            times.append(t)
            outs.append(out)
        speed = times[-1] / times[0] if len(times) > 1 else 1.0
        diff = float(np.max(np.abs(outs[0] - outs[-1])))
        print(f"{name:<20}" + "".join(f"{t:>14.4f}" for t in times) + f"{speed:>10.1f}{diff:>13.2e}")


if __name__ == "__main__":
    main()
