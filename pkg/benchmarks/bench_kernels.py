"""Compare the compiled per-cell kernels with the numpy fallback.

Run from the repository root::

    python3 benchmarks/bench_kernels.py [--cells N] [--repeat K]

The first table times each kernel on identical inputs and checks that the
outputs agree.  The second times a full Poisson ``simulate_counts`` run in a
subprocess per backend (the backend is fixed at import time).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from screenopt import _fallback, kernels

SIM_SNIPPET = """
import time
import numpy as np
from screenopt import FluorescenceModel, ScreenConfig, simulate_counts
from screenopt.kernels import BACKEND
cfg = ScreenConfig(200, 10000, 3, model="poisson", lam=0.5)
fl = FluorescenceModel.normal(0.4, 0.0)
t = time.perf_counter()
x, _ = simulate_counts(cfg, fl, 0.8, replicates={reps}, seed=1, workers=1)
print(BACKEND, time.perf_counter() - t, int(x.sum()))
"""


def kernel_inputs(cells, r=200, lam=0.5, seed=0):
    rng = np.random.default_rng(seed)
    k = np.arange(1, 40)
    pmf = np.exp(-lam) * lam ** k / np.cumprod(k) / -np.expm1(-lam)
    cdf = np.cumsum(pmf)
    u = rng.random(cells)
    sizes = _fallback.ztp_sizes(u, cdf)
    types = rng.integers(0, r, size=int(sizes.sum()))
    weights = (rng.random(cells) < 0.2).astype(np.int64)
    return u, cdf, sizes, types, weights, r


def bench_kernels(cells, repeat):
    u, cdf, sizes, types, weights, r = kernel_inputs(cells)
    cases = [
        ("ztp_sizes", lambda m: m.ztp_sizes(u, cdf)),
        ("target_flags", lambda m: m.target_flags(sizes, types)),
        ("weighted_type_counts", lambda m: m.weighted_type_counts(sizes, types, weights, r)),
    ]
    print(f"kernels on {cells} cells (compiled backend: {kernels.BACKEND})")
    print(f"{'kernel':<22}{'compiled ms':>12}{'numpy ms':>12}{'speedup':>9}  same")
    for name, call in cases:
        tc = min(timeit.repeat(lambda: call(kernels), number=1, repeat=repeat)) * 1e3
        tp = min(timeit.repeat(lambda: call(_fallback), number=1, repeat=repeat)) * 1e3
        same = np.array_equal(call(kernels), call(_fallback))
        print(f"{name:<22}{tc:>12.2f}{tp:>12.2f}{tp / tc:>9.2f}  {same}")


def bench_simulation(reps):
    print(f"\nPoisson simulate_counts, r=200 n=10000 lam=0.5, {reps} replicates, 1 worker")
    rows = []
    for pure in ("0", "1"):
        env = dict(os.environ, SCREENOPT_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", SIM_SNIPPET.format(reps=reps)],
                             env=env, capture_output=True, text=True, check=True)
        backend, secs, total = out.stdout.split()
        rows.append((backend, float(secs), int(total)))
        print(f"{backend:<8}{float(secs):>8.2f} s   checksum {total}")
    if rows[0][0] != rows[1][0]:
        print(f"speedup {rows[1][1] / rows[0][1]:.2f}x, identical: {rows[0][2] == rows[1][2]}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, default=10 ** 6)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--replicates", type=int, default=200)
    args = ap.parse_args()
    bench_kernels(args.cells, args.repeat)
    bench_simulation(args.replicates)


if __name__ == "__main__":
    main()
