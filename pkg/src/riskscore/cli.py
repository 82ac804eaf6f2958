"""Command-line interface: train, predict, evaluate, pool, simulate, benchmark.

Every flag can also be set through an environment variable named
``RISKSCORE_`` plus the flag name in upper case with dashes as underscores
(``--max-size`` -> ``RISKSCORE_MAX_SIZE``). Command-line values win.

Exit codes: 0 success, 1 bad input or configuration, 2 infeasible problem
(or no feasible pooled model), 3 a limit was hit before the gap closed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DataError, load_bundled, load_csv, simulate_nested, write_csv
from .evaluation import ModelError, RiskScoreModel, metrics, read_model, reliability_diagram, render_risk_table, write_model
from .problem import CoefficientSet, ConstraintError, MaxModelSize, ProblemSpec, load_constraints

log = logging.getLogger("riskscore")

ENV_PREFIX = "RISKSCORE_"
EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_LIMIT = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

def _env_default(parser):
    """Replace argument defaults with RISKSCORE_* environment values."""
    for act in parser._actions:
        if not act.option_strings or act.dest in ("help", "version"):
            continue
        key = ENV_PREFIX + act.dest.upper()
        if key in os.environ:
            raw = os.environ[key]
            if isinstance(act, argparse._StoreTrueAction):
                act.default = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                try:
                    act.default = act.type(raw) if act.type else raw
                except (TypeError, ValueError):
                    raise ConfigError(f"{key}={raw!r} is not a valid value for {act.option_strings[0]}") from None


def _problem_flags(p, need_data=True):
    p.add_argument("--data", required=False, help="CSV with a header row (default: bundled breastcancer)"
                   if not need_data else "CSV with a header row")
    p.add_argument("--outcome", help="outcome column (default: first column)")
    p.add_argument("--constraints", help="constraint file")
    p.add_argument("--max-size", type=int, help="at most this many non-zero points")
    p.add_argument("--coef-min", type=int, default=-5)
    p.add_argument("--coef-max", type=int, default=5)
    p.add_argument("--intercept-min", type=int, default=-100)
    p.add_argument("--intercept-max", type=int, default=100)
    p.add_argument("--c0", type=float, help="sparsity penalty (default 1e-6 with --max-size)")


def _solver_flags(p):
    p.add_argument("--gap-tol", type=float, default=0.0)
    p.add_argument("--time-limit", type=float, default=math.inf)
    p.add_argument("--node-limit", type=int)
    p.add_argument("--no-init", action="store_true", help="skip the cutting-plane warm start")


def _common_flags(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=".", help="output directory")


def build_parser():
    ap = argparse.ArgumentParser(prog="riskscore", description="Train and evaluate certifiably optimal risk scores.")
    ap.add_argument("--version", action="version", version=f"riskscore {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="solve for an optimal risk score")
    _problem_flags(p)
    _solver_flags(p)
    _common_flags(p)

    for name, hlp in (("predict", "per-row score and risk"), ("evaluate", "CAL, AUC, loss and reliability points")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--model", required=False)
        p.add_argument("--data", required=False)
        p.add_argument("--outcome")
        _common_flags(p)

    p = sub.add_parser("pool", help="pooled penalized-logistic baseline")
    _problem_flags(p)
    p.add_argument("--method", default="SeqRd+DCD")
    p.add_argument("--mixing", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1",
                   help="comma-separated elastic-net mixing weights")
    p.add_argument("--n-penalties", type=int, default=100)
    p.add_argument("--folds", type=int, default=5)
    _common_flags(p)

    p = sub.add_parser("simulate", help="nested synthetic datasets")
    p.add_argument("--data", help="source dataset with 0..10 features (default: bundled breastcancer)")
    p.add_argument("--outcome")
    p.add_argument("--dims", default="5,10,15,20")
    p.add_argument("--sizes", default="1000,10000")
    _common_flags(p)

    p = sub.add_parser("benchmark", help="compare LCPA, warm-started LCPA and CPA on one instance")
    _problem_flags(p, need_data=False)
    _solver_flags(p)
    p.add_argument("--methods", default="lcpa,cpa-lp-init+lcpa,cpa-mip")
    p.add_argument("--iteration-time-limit", type=float, default=60.0)
    p.add_argument("--max-iter", type=int, default=100)
    _common_flags(p)
    return ap


def _resolved(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in cfg.items()}


_NOT_IN_HEADER = ("out", "verbose", "jobs")  # do not change results


def header_lines(args):
    cfg = {k: v for k, v in _resolved(args).items() if k not in _NOT_IN_HEADER}
    return [f"riskscore {__version__}", "config " + json.dumps(cfg, sort_keys=True)]


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(args, default_bundled=False):
    if not args.data:
        if default_bundled:
            return load_bundled()
        raise ConfigError("--data is required")
    return load_csv(args.data, args.outcome)


def _spec(args, data):
    if args.coef_min > 0 or args.coef_max < 0:
        raise ConfigError("--coef-min/--coef-max must bracket 0")
    if args.intercept_min > 0 or args.intercept_max < 0:
        raise ConfigError("--intercept-min/--intercept-max must bracket 0")
    coefs = CoefficientSet.uniform(data.d, args.coef_min, args.coef_max,
                                   intercept=(args.intercept_min, args.intercept_max))
    cons = []
    if args.constraints:
        cons.extend(load_constraints(args.constraints))
    if args.max_size is not None:
        if args.max_size < 0:
            raise ConfigError("--max-size must be non-negative")
        cons.append(MaxModelSize(args.max_size))
    spec = ProblemSpec(data, coefs, args.c0, tuple(cons))
    args.c0 = spec.C0  # record the effective value in output headers
    return spec


def _options(args, trace_path=None):
    from .lcpa import SolverOptions

    if not 0.0 <= args.gap_tol <= 1.0:
        raise ConfigError("--gap-tol must lie in [0, 1]")
    if args.time_limit <= 0:
        raise ConfigError("--time-limit must be positive")
    return SolverOptions(gap_tol=args.gap_tol, time_limit=args.time_limit, node_limit=args.node_limit,
                         initialize=not args.no_init, seed=args.seed, trace_path=trace_path)


def _write_rows(path, rows, cols, head):
    with open(path, "w", newline="") as fh:
        for line in head:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c] for c in cols])


def _write_eval(out, model, data, head, prefix=""):
    m = metrics(model, data)
    _write_rows(out / f"{prefix}metrics.csv", [m], ["n", "size", "loss", "cal", "auc"], head)
    rel = reliability_diagram(model, data)
    _write_rows(out / f"{prefix}reliability.csv", rel.to_rows(),
                ["score_lo", "score_hi", "predicted", "observed", "count"], head)
    return m


# ---------------------------------------------------------------- commands

def cmd_train(args):
    from .lcpa import Trace, lcpa_solve

    data = _load_data(args)
    spec = _spec(args, data)
    out = _out_dir(args)
    head = header_lines(args)
    trace = Trace(out / "trace.csv", head)
    try:
        res = lcpa_solve(spec, _options(args), trace=trace)
    finally:
        trace.close()
    if res.coefficients is None:
        print("no feasible risk score: the constraints exclude every point of the coefficient set")
        return EXIT_INFEASIBLE
    opts = {k: v for k, v in _resolved(args).items() if k not in _NOT_IN_HEADER}
    model = RiskScoreModel(res.coefficients, data.names, {
        "method": "lcpa", "objective": repr(float(res.objective)), "lower_bound": repr(float(res.lower_bound)),
        "gap": repr(float(res.gap)), "status": res.status, "options": opts})
    # wall-clock fields stay out of the model file so that reruns are byte-identical
    write_model(model, out / "model.txt", head)
    m = _write_eval(out, model, data, head)
    table, _ = render_risk_table(model, data)
    (out / "risk_table.txt").write_text(table + "\n")
    print(table)
    print(f"objective {res.objective:.10g}  lower bound {res.lower_bound:.10g}  gap {100 * res.gap:.4f}%  "
          f"nodes {res.nodes}  cuts {res.cuts_added}  time {res.wall_time:.2f}s")
    print(f"termination: {res.status}")
    print(f"training loss {m['loss']:.6f}  CAL {m['cal']:.2f}%  AUC {m['auc']:.4f}")
    if res.status in ("time limit", "node limit"):
        return EXIT_LIMIT
    return EXIT_OK


def _model_and_data(args):
    if not args.model:
        raise ConfigError("--model is required")
    if not Path(args.model).exists():
        raise ConfigError(f"{args.model}: file not found")
    model = read_model(args.model)
    data = _load_data(args)
    model.align(data)  # raises ModelError listing unmatched names
    return model, data


def cmd_predict(args):
    model, data = _model_and_data(args)
    out = _out_dir(args)
    s = model.scores(data)
    r = model.risks(data)
    rows = [{"row": i + 1, "score": float(a), "risk": float(b)} for i, (a, b) in enumerate(zip(s, r))]
    _write_rows(out / "predictions.csv", rows, ["row", "score", "risk"], header_lines(args))
    print(f"wrote {len(rows)} predictions to {out / 'predictions.csv'}")
    return EXIT_OK


def cmd_evaluate(args):
    model, data = _model_and_data(args)
    out = _out_dir(args)
    m = _write_eval(out, model, data, header_lines(args))
    print(f"loss {m['loss']:.6f}  CAL {m['cal']:.2f}%  AUC {m['auc']:.4f}  n {m['n']}")
    return EXIT_OK


def cmd_pool(args):
    from .baselines import POST_PROCESSORS, default_grid, fit_pool, pooled_pipeline, _signs_of

    if args.method not in POST_PROCESSORS:
        raise ConfigError(f"--method must be one of {', '.join(POST_PROCESSORS)}")
    try:
        mixing = [float(v) for v in args.mixing.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--mixing: cannot parse {args.mixing!r}") from None
    if not mixing or any(not 0 <= a <= 1 for a in mixing):
        raise ConfigError("--mixing needs values in [0, 1]")
    if args.n_penalties < 1:
        raise ConfigError("--n-penalties must be at least 1")
    data = _load_data(args)
    spec = _spec(args, data)
    out = _out_dir(args)
    head = header_lines(args)
    grid = default_grid(data, _signs_of(spec), mixing, args.n_penalties)
    pf = fit_pool(spec, grid, args.folds, args.seed, jobs=args.jobs)
    res = pooled_pipeline(spec, args.method, k=args.folds, seed=args.seed, fits=pf,
                          report_path=out / "pool_report.csv", header_lines=head)
    print(f"pool of {len(res.rows)} models, feasible fraction {res.feasible_fraction['feasible']:.3f}")
    if not res.found:
        print("no feasible model in the pool")
        return EXIT_INFEASIBLE
    res.model.provenance["options"] = {k: v for k, v in _resolved(args).items() if k not in _NOT_IN_HEADER}
    write_model(res.model, out / "model.txt", head)
    m = _write_eval(out, res.model, data, head)
    print(render_risk_table(res.model, data)[0])
    print(f"training loss {m['loss']:.6f}  CAL {m['cal']:.2f}%  AUC {m['auc']:.4f}")
    return EXIT_OK


def _int_list(text, flag):
    try:
        v = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{flag}: cannot parse {text!r}") from None
    if not v or any(x <= 0 for x in v):
        raise ConfigError(f"{flag} needs positive integers")
    return sorted(v)


def cmd_simulate(args):
    dims = _int_list(args.dims, "--dims")
    sizes = _int_list(args.sizes, "--sizes")
    src = _load_data(args, default_bundled=True)
    out = _out_dir(args)
    head = header_lines(args)
    sets = simulate_nested(src, dims, sizes, args.seed)
    for (n, d), ds in sorted(sets.items()):
        write_csv(ds, out / f"sim_n{n}_d{d}.csv", header_lines=head)
    print(f"wrote {len(sets)} datasets to {out}")
    return EXIT_OK


def _time_to_good(trace, target):
    for t, _, _, _, vmax, _, _ in trace:
        if vmax <= target:
            return t
    return math.nan


def cmd_benchmark(args):
    from .lcpa import Trace, cpa_solve, lcpa_solve

    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    known = ("lcpa", "cpa-lp-init+lcpa", "cpa-mip")
    bad = [m for m in methods if m not in known]
    if bad:
        raise ConfigError(f"unknown benchmark methods: {', '.join(bad)}")
    data = _load_data(args, default_bundled=True)
    spec = _spec(args, data)
    out = _out_dir(args)
    head = header_lines(args)
    results = {}
    for m in methods:
        trace = Trace(out / f"trace_{m}.csv", head)
        opts = _options(args)
        try:
            if m == "cpa-mip":
                r = cpa_solve(spec, opts, mode="mip", max_iter=args.max_iter, time_limit=args.time_limit,
                              iteration_time_limit=args.iteration_time_limit, trace=trace)
            else:
                opts.initialize = m != "lcpa"
                r = lcpa_solve(spec, opts, trace=trace)
        finally:
            trace.close()
        results[m] = r
        if r.iteration_times:
            _write_rows(out / f"iterations_{m}.csv",
                        [{"iteration": i + 1, "seconds": t} for i, t in enumerate(r.iteration_times)],
                        ["iteration", "seconds"], head)
    best = min(r.objective for r in results.values())
    rows = []
    for m, r in results.items():
        tot = r.timings.get("total", r.wall_time) or r.wall_time
        data_t = r.timings.get("cut", 0.0)
        rows.append({"method": m, "status": r.status, "objective": float(r.objective),
                     "time_to_good_s": _time_to_good(r.trace, best * 1.1), "final_gap": float(r.gap),
                     "pct_time_data": 100.0 * data_t / tot if tot > 0 else 0.0, "nodes": r.nodes,
                     "cuts": r.cuts_added, "wall_time_s": float(r.wall_time)})
    cols = ["method", "status", "objective", "time_to_good_s", "final_gap", "pct_time_data", "nodes", "cuts",
            "wall_time_s"]
    _write_rows(out / "summary.csv", rows, cols, head)
    for r in rows:
        print("  ".join(f"{c}={r[c]}" for c in cols))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate, "pool": cmd_pool,
            "simulate": cmd_simulate, "benchmark": cmd_benchmark}


def main(argv=None):
    parser = build_parser()
    try:
        for sp in parser._subparsers._group_actions[0].choices.values():
            _env_default(sp)
        _env_default(parser)
    except ConfigError as e:
        print(f"riskscore: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits with 2 on usage errors; the contract reserves 2 for infeasibility
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, ConstraintError, ModelError, OSError) as e:
        print(f"riskscore: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        print(f"riskscore: error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
