"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_backends.py [--sizes 1000,10000,100000] [--repeat 5]

Kernel timings run both backends in one process. The end-to-end solve runs
in a subprocess per backend because RISKSCORE_BACKEND is read at import.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from riskscore._kernels import HAS_NUMBA, get_backend

SOLVE = """
import time
from riskscore import CoefficientSet, ProblemSpec, SolverOptions, lcpa_solve, load_bundled
from riskscore.problem import MaxModelSize
data = load_bundled()
spec = ProblemSpec(data, CoefficientSet.uniform(data.d, -5, 5, intercept=(-100, 100)), 1e-6, (MaxModelSize(3),))
lcpa_solve(spec, SolverOptions(node_limit=5))
t = time.perf_counter()
r = lcpa_solve(spec, SolverOptions(node_limit=2000))
print(time.perf_counter() - t, r.objective)
"""


def _cases(n, d, rng):
    Z = rng.integers(-10, 11, size=(n, d + 1)).astype(np.float64)
    lam = rng.integers(-5, 6, size=d + 1).astype(np.float64)
    s = Z @ lam
    si = s.astype(np.int64)
    off = int(si.min()) - 60
    table = np.log1p(np.exp(-np.arange(off, si.max() + 61, dtype=np.float64)))
    deltas = np.arange(-5.0, 6.0)
    zi = Z[:, 1].astype(np.int64)
    return {
        "loss": lambda K: K.loss_scores(s),
        "loss+grad": lambda K: K.loss_grad(Z, lam),
        "loss (table)": lambda K: K.loss_table(si, table, off),
        "coordinate scan": lambda K: K.coord_losses(s, Z[:, 1], deltas),
        "coordinate scan (table)": lambda K: K.coord_losses_table(si, zi, deltas.astype(np.int64), table, off),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="1000,10000,100000")
    ap.add_argument("--d", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-solve", action="store_true")
    args = ap.parse_args()
    if not HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    nb, npb = get_backend("numba"), get_backend("numpy")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'n':>8}{'numba ms':>11}{'numpy ms':>11}{'speedup':>9}")
    for n in (int(v) for v in args.sizes.split(",")):
        for name, fn in _cases(n, args.d, rng).items():
            a, b = fn(nb), fn(npb)  # also compiles
            same = np.allclose(np.asarray(a[0] if isinstance(a, tuple) else a),
                               np.asarray(b[0] if isinstance(b, tuple) else b), rtol=1e-12, atol=1e-12)
            loops = max(1, 200_000 // n)
            t_nb = min(timeit.repeat(lambda: fn(nb), number=loops, repeat=args.repeat)) / loops
            t_np = min(timeit.repeat(lambda: fn(npb), number=loops, repeat=args.repeat)) / loops
            flag = "" if same else "  MISMATCH"
            print(f"{name:<26}{n:>8}{1e3 * t_nb:>11.3f}{1e3 * t_np:>11.3f}{t_np / t_nb:>8.1f}x{flag}")
    if args.no_solve:
        return
    print("\nend-to-end: breastcancer, max size 3, 2000 nodes")
    for backend in ("numba", "numpy"):
        env = dict(os.environ, RISKSCORE_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", SOLVE], env=env, capture_output=True, text=True, check=True)
        t, obj = out.stdout.split()
        print(f"  {backend:<6} {float(t):7.2f}s  objective {float(obj):.12f}")


if __name__ == "__main__":
    main()
