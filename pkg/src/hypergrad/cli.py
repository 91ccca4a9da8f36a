"""Command-line harness: ``run``, ``gradcheck`` and ``sweep-k``."""

import argparse
import copy
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .diagnostics import UNDEFINED, f1_hypercleaner, rel_error
from .engines import checkpointed_rmd, fmd, full_rmd, implicit_cg, k_rmd, neumann_k, unrolled_upper
from .numerics import fd_gradient, make_rng, norm
from .outer import OuterLoopError, optimize
from .problems import PROBLEMS, build_problem

TRACE_COLUMNS = ("iter", "f_value", "grad_est_norm", "true_grad_norm", "bias", "cosine", "descent_ratio",
                 "wallclock_s")
SWEEP_COLUMNS = ("K", "final_f_value", "final_true_grad_norm", "final_f1", "iterations", "sec_per_iter",
                 "peak_states_stored")
GATE = 1e-4

EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_ENGINE = 0, 1, 2, 3


def fmt(value):
    """Locale-independent CSV cell: shortest round-trip float, empty when absent."""
    if value is None:
        return ""
    if value is UNDEFINED:
        return "undefined"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in trace.records:
            writer.writerow([fmt(getattr(r, c)) for c in TRACE_COLUMNS])


def lambda_hash(lam):
    return hashlib.sha256(np.ascontiguousarray(lam, dtype=np.float64).tobytes()).hexdigest()


def _initial_lambda(value, N):
    if value is None:
        return None
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(N, float(arr))
    if arr.shape != (N,):
        raise cfgmod.ConfigError("problem.init_lambda", f"expected a scalar or {N} entries, got {arr.shape[0]}")
    return arr


def build(cfg):
    """Problem and initial ``lam`` for a validated config."""
    p = cfg["problem"]
    try:
        problem = build_problem(p["name"], p["parameters"], seed=p["seed"], gamma=cfg["unroll"].get("gamma"),
                                T=cfg["unroll"].get("T"))
    except TypeError as exc:
        raise cfgmod.ConfigError("problem.parameters", str(exc)) from exc
    eng = cfg["engine"]
    if eng["mode"] == "k_rmd" and eng["K"] > problem.T + 1:
        raise cfgmod.ConfigError("engine.K", f"K={eng['K']} exceeds T+1={problem.T + 1}")
    return problem, _initial_lambda(p.get("init_lambda"), problem.N)


def run_experiment(cfg, out_dir=None):
    """Run one validated config; write ``trace.csv`` and ``summary.json`` and return the summary."""
    problem, lam0 = build(cfg)
    out = Path(out_dir or cfg["output"].get("directory") or "hypergrad_out")
    out.mkdir(parents=True, exist_ok=True)
    rng = make_rng(cfg["problem"]["seed"], trial=0) if problem.stochastic else None
    trace = optimize(problem, cfgmod.engine_config(cfg), cfgmod.outer_config(cfg), rng=rng, lam0=lam0)
    write_trace(out / "trace.csv", trace)
    lam = trace.final_lambda
    summary = {
        "final_f_value": unrolled_upper(problem, lam, problem.T),
        "final_true_grad_norm": trace.last_true_grad_norm,
        "final_f1": None,
        "iterations": len(trace),
        "total_wallclock_s": trace.wallclock_s,
        "sec_per_iter": trace.wallclock_s / len(trace),
        "peak_states_stored": trace.peak_states_stored,
        "stopped_early": trace.stopped_early,
        "eta0_used": trace.eta0_used,
        "final_lambda_sha256": lambda_hash(lam),
        "seed": cfg["problem"]["seed"],
        "config": cfg,
    }
    mask = problem.data.get("mask")
    if mask is not None:
        summary["f1_by_threshold"] = {repr(float(t)): f1_hypercleaner(lam, mask, t)
                                      for t in cfg["diagnostics"]["f1_thresholds"]}
        summary["final_f1"] = f1_hypercleaner(lam, mask, -3.0)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


# ---------------------------------------------------------------- gradcheck


def gradcheck_rows(problem, lam, T, K=1, cg_iters=50):
    """Rows ``(engine, rel_error, gated)`` comparing each engine with central differences."""
    lam = problem.check_lambda(lam)
    oracle = fd_gradient(lambda x: unrolled_upper(problem, x, T), lam)
    K = min(K, T + 1)
    engines = [
        ("full_rmd", True, lambda: full_rmd(problem, lam, T)),
        ("fmd", True, lambda: fmd(problem, lam, T)),
        ("checkpointed_rmd", True, lambda: checkpointed_rmd(problem, lam, T)),
        (f"k_rmd(K={K})", False, lambda: k_rmd(problem, lam, T, K)),
        (f"neumann(K={min(K, max(T, 1))})", False, lambda: neumann_k(problem, lam, T, min(K, max(T, 1)))),
        (f"implicit_cg(iters={cg_iters})", False, lambda: implicit_cg(problem, lam, T, cg_iters)),
    ]
    rows = []
    for name, gated, fn in engines:
        try:
            grad = fn().gradient
            err = rel_error(grad, oracle)
            if err is UNDEFINED:
                err = norm(grad)
            rows.append((name, err, gated, ""))
        except (ArithmeticError, MemoryError, ValueError) as exc:
            rows.append((name, None, gated, f"{type(exc).__name__}: {exc}"))
    return rows


def _cmd_gradcheck(args):
    if args.problem not in PROBLEMS:
        print(f"unknown problem {args.problem!r}; choose one of: {', '.join(sorted(PROBLEMS))}", file=sys.stderr)
        return EXIT_CONFIG
    problem = build_problem(args.problem, {}, seed=args.seed, T=args.horizon)
    problem = problem.instance(make_rng(args.seed, trial=0)) if problem.stochastic and args.sample else problem
    try:
        values = [float(v) for v in args.lam.split(",") if v.strip()]
    except ValueError:
        print(f"--lambda must be a comma-separated list of numbers, got {args.lam!r}", file=sys.stderr)
        return EXIT_CONFIG
    if len(values) == 1:
        values = values * problem.N
    if len(values) != problem.N:
        print(f"--lambda needs 1 or {problem.N} entries for {args.problem}, got {len(values)}", file=sys.stderr)
        return EXIT_CONFIG
    rows = gradcheck_rows(problem, np.array(values), args.horizon, K=args.K, cg_iters=args.cg_iters)
    print(f"problem={args.problem} N={problem.N} M={problem.M} T={args.horizon}")
    print(f"{'engine':<26} {'rel_error':>12}  status")
    failed = False
    for name, err, gated, note in rows:
        if err is None:
            status = "ERROR " + note
            failed |= gated
        elif gated:
            ok = err <= GATE
            failed |= not ok
            status = "ok" if ok else f"FAIL (> {GATE:g})"
        else:
            status = "reported (bias, not gated)"
        cell = "-" if err is None else f"{err:.3e}"
        print(f"{name:<26} {cell:>12}  {status}")
    return EXIT_GATE if failed else EXIT_OK


# ------------------------------------------------------------------ sweep-k


def parse_ks(text, T):
    ks = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        k = T + 1 if tok == "full" else int(tok)
        if not 1 <= k <= T + 1:
            raise cfgmod.ConfigError("ks", f"K={k} outside [1, T+1={T + 1}]")
        ks.append(k)
    if not ks:
        raise cfgmod.ConfigError("ks", "empty K list")
    return ks


def thread_cap():
    try:
        return max(1, int(os.environ.get("HYPERGRAD_THREADS", "1")))
    except ValueError:
        return 1


def sweep_k(cfg, ks, out_dir):
    """One ``k_rmd`` run per K, each in its own subdirectory; writes ``sweep.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def job(k):
        sub = copy.deepcopy(cfg)
        sub["engine"] = {**sub["engine"], "mode": "k_rmd", "K": k}
        return k, run_experiment(sub, out / f"K{k}")

    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        results = list(pool.map(job, ks))
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for k, s in results:
            writer.writerow([fmt(k)] + [fmt(s[c]) for c in SWEEP_COLUMNS[1:]])
    return results


# --------------------------------------------------------------------- main


def _load(path):
    try:
        return cfgmod.load(path), None
    except cfgmod.ConfigError as exc:
        return None, exc
    except OSError as exc:
        return None, cfgmod.ConfigError("", f"cannot read {path}: {exc}")


def _cmd_run(args):
    cfg, err = _load(args.config)
    if err is not None:
        print(err, file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary = run_experiment(cfg, args.out)
    except cfgmod.ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except OuterLoopError as exc:
        print(f"engine error at {exc}", file=sys.stderr)
        return EXIT_ENGINE
    print(json.dumps({k: summary[k] for k in ("final_f_value", "final_true_grad_norm", "final_f1",
                                               "iterations", "peak_states_stored")}))
    return EXIT_OK


def _cmd_sweep(args):
    cfg, err = _load(args.config)
    if err is not None:
        print(err, file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg["output"].get("directory") or "hypergrad_sweep"
    try:
        problem, _ = build(cfg)
        ks = parse_ks(args.ks, problem.T)
        results = sweep_k(cfg, ks, out)
    except cfgmod.ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except OuterLoopError as exc:
        print(f"engine error at {exc}", file=sys.stderr)
        return EXIT_ENGINE
    for k, s in results:
        print(f"K={k}: final_f_value={s['final_f_value']:.6g} sec_per_iter={s['sec_per_iter']:.4g}")
    return EXIT_OK


def make_parser():
    parser = argparse.ArgumentParser(prog="hypergrad", description="Unrolled hypergradient experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (overrides output.directory)")
    run.set_defaults(func=_cmd_run)

    gc = sub.add_parser("gradcheck", help="compare every engine with a finite-difference oracle")
    gc.add_argument("--problem", required=True)
    gc.add_argument("--lambda", dest="lam", required=True, help="comma-separated values (one value broadcasts)")
    gc.add_argument("--horizon", type=int, required=True)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--K", type=int, default=1, help="truncation for the k_rmd and neumann rows")
    gc.add_argument("--cg-iters", type=int, default=50)
    gc.add_argument("--sample", action="store_true", help="check a sampled context of a stochastic problem")
    gc.set_defaults(func=_cmd_gradcheck)

    sw = sub.add_parser("sweep-k", help="k_rmd runs over a list of K values")
    sw.add_argument("--config", required=True)
    sw.add_argument("--ks", required=True, help="comma-separated K values; 'full' means T+1")
    sw.add_argument("--out")
    sw.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    if getattr(args, "horizon", 0) < 0:
        print("--horizon must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
