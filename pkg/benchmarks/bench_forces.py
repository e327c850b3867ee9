"""Time the retarded pair-force sum on the compiled core and the NumPy fallback.

Usage: python3 benchmarks/bench_forces.py [--particles 32 64] [--repeat 3]
"""
import argparse
import time

import numpy as np

from vmlimit import _backend
from vmlimit.kernels import SmoothedWaveKernel
from vmlimit.maxwell import uniform_motion_history
from vmlimit.params import RegularizationParams


def setup(n, c=4.0, theta=0.3, seed=0):
    kernel = SmoothedWaveKernel.from_params(RegularizationParams(n, theta, c))
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (n, 3))
    u = rng.uniform(-0.3, 0.3, (n, 3)) * c
    dt = 0.25 * kernel.width / c
    steps = int(np.ceil(1.5 / dt))
    hist = uniform_motion_history(x, u, c, dt, steps + 1)
    return kernel, hist.view(), steps * dt


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--particles", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = ["python"] + (["cython"] if _backend.COMPILED else [])
    print(f"{'N':>5} {'pairs':>6} " + " ".join(f"{b + ' [s]':>12}" for b in backends) + f" {'speedup':>8} {'max|diff|':>10}")
    for n in args.particles:
        kernel, hv, t = setup(n)
        res = {}
        for b in backends:
            res[b] = best_time(lambda b=b: _backend.pair_force_sums(hv.hx[-1], hv.hu[-1], hv, t, kernel, backend=b),
                               args.repeat)
        line = f"{n:>5d} {n * (n - 1):>6d} " + " ".join(f"{res[b][0]:>12.4f}" for b in backends)
        if "cython" in res:
            diff = max(np.abs(res["cython"][1][k] - res["python"][1][k]).max() for k in (0, 1))
            line += f" {res['python'][0] / res['cython'][0]:>8.1f} {diff:>10.2e}"
        print(line)


if __name__ == "__main__":
    main()
