"""Compare the numba and numpy kernel paths.

Part one times each softmax kernel from both tables in one process.  Part two
times a full hypergradient on the hypercleaning problem in two subprocesses, one
with ``HYPERGRAD_DISABLE_NUMBA=1``, because the active path is fixed at import.

    python3 benchmarks/bench_kernels.py --n 2000 --d 50 --classes 10
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from hypergrad.kernels import NUMBA_KERNELS, NUMPY_KERNELS

ENGINE_SNIPPET = """
import json, time
from hypergrad import kernels
from hypergrad.engines import full_rmd, k_rmd
from hypergrad.problems import build_problem
prob = build_problem("hypercleaning", {{"n_train": {n}, "n_val": {n}, "d": {d}, "classes": {k}}}, seed=0, T={T})
lam = prob.default_lambda()
full_rmd(prob, lam, 2)  # compile outside the timed region
out = {{"backend": kernels.backend()}}
for name, fn in (("full_rmd", lambda: full_rmd(prob, lam, {T})), ("k_rmd(5)", lambda: k_rmd(prob, lam, {T}, 5))):
    best = float("inf")
    for _ in range({repeats}):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    out[name] = best
print(json.dumps(out))
"""


def kernel_args(n, d, k, seed=0):
    rng = np.random.default_rng(seed)
    X = np.hstack([rng.standard_normal((n, d)), np.ones((n, 1))])
    W = 0.1 * rng.standard_normal((k, d + 1))
    V = rng.standard_normal((k, d + 1))
    labels = rng.integers(0, k, n).astype(np.int64)
    weights = rng.random(n)
    P = NUMPY_KERNELS["softmax_probs"](X, W)
    return {
        "softmax_probs": (X, W),
        "ce_values": (P, labels),
        "weighted_ce_grad": (X, P, labels, weights),
        "weighted_ce_hvp": (X, P, weights, V),
        "ce_grad_inner": (X, P, labels, V),
    }


def best_of(fn, args, repeats, number):
    fn(*args)  # warm up (and compile)
    return min(timeit.repeat(lambda: fn(*args), repeat=repeats, number=number)) / number


def engine_timings(n, d, k, T, repeats):
    rows = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = {**os.environ, "HYPERGRAD_DISABLE_NUMBA": flag}
        code = ENGINE_SNIPPET.format(n=n, d=d, k=k, T=T, repeats=repeats)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        rows[label] = json.loads(out.stdout)
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--d", type=int, default=50)
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--T", type=int, default=100)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--number", type=int, default=20)
    parser.add_argument("--skip-engine", action="store_true")
    args = parser.parse_args(argv)

    print(f"kernels at n={args.n}, d={args.d}, classes={args.classes} (best of {args.repeats}, microseconds)")
    print(f"{'kernel':<18}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, fargs in kernel_args(args.n, args.d, args.classes).items():
        t_np = best_of(NUMPY_KERNELS[name], fargs, args.repeats, args.number)
        t_nb = best_of(NUMBA_KERNELS[name], fargs, args.repeats, args.number)
        print(f"{name:<18}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>9.2f}x")

    if args.skip_engine:
        return 0
    rows = engine_timings(args.n, args.d, args.classes, args.T, args.repeats)
    print(f"\nhypercleaning hypergradient, T={args.T} (best of {args.repeats}, seconds)")
    print(f"{'engine':<18}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name in ("full_rmd", "k_rmd(5)"):
        t_np, t_nb = rows["numpy"][name], rows["numba"][name]
        print(f"{name:<18}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.2f}x")
    print(f"(backends reported by the subprocesses: {rows['numba']['backend']}, {rows['numpy']['backend']})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
