"""Command-line front end.

Exit codes: 0 success, 2 input error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .baselines import (BaselineConfig, TuningError, admm_solve, ladmm_solve, pd_solve,
                        spg_solve, threshold_coefficients)
from .hybrid import HybridConfig, SolverError, min_norm_subgradient, solve_sgfl
from .metrics import build_grid, evaluate_fit, hausdorff_distance
from .path import fit_path, path_table, select
from .problem import DimensionError, PenaltyConfig, Solution, SolverReport
from .simulate import SimSpec, simulate

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3

BASELINES = {"pd": pd_solve, "admm": admm_solve, "ladmm": ladmm_solve, "spg": spg_solve}


class InputError(Exception):
    pass


def _ints(s):
    return [int(v) for v in s.split(",") if v.strip()] if s else []


def _floats(s):
    return [float(v) for v in s.split(",") if v.strip()] if s else []


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _out(args) -> Path:
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _data(args):
    if not args.data:
        raise InputError("--data is required")
    p = Path(args.data)
    if p.is_file() and p.suffix == ".csv":
        return io.read_response_csv(p)
    if not (p / "manifest.json").exists():
        raise InputError(f"no dataset container at {p}")
    return io.load_dataset(p)


def _penalty(args, T):
    if args.lambda1 is None or args.lambda2 is None:
        raise InputError("--lambda1 and --lambda2 are required")
    return PenaltyConfig(args.lambda1, args.lambda2, args.alpha,
                         io.read_weights(args.weights, T))


def _hybrid(args, sweep=None, seed=None):
    return HybridConfig(epsilon=args.epsilon, sweep=sweep or args.sweep,
                        seed=args.seed if seed is None else seed)


def cmd_simulate(args) -> int:
    spec = SimSpec(args.d, args.p, args.T, tuple(_ints(args.change_points)),
                   args.sparsity, args.sigma, args.rho, args.seed)
    ds, beta, seg = simulate(spec)
    out = _out(args)
    io.save_dataset(ds, out)
    io.write_coefficients(Solution(beta[seg.starts], seg), out / "truth_beta.csv")
    io.write_segmentation(seg, out / "truth_segmentation.json")
    io.write_json({"d": spec.d, "p": spec.p, "T": spec.T,
                   "change_points": list(spec.change_points), "sparsity": spec.sparsity,
                   "sigma": spec.sigma, "rho": spec.rho, "seed": spec.seed},
                  out / "simspec.json")
    return EXIT_OK


def _write_fit(out, sol, rep, dense):
    io.write_coefficients(sol, out / "coefficients.csv")
    if dense:
        io.write_coefficients(sol, out / "coefficients_dense.csv", dense=True)
    io.write_segmentation(sol.segmentation, out / "segmentation.json")
    d = rep.to_dict()
    d["objective"] = sol.objective
    io.write_json(d, out / "report.json")


def cmd_fit(args) -> int:
    ds = _data(args)
    pen = _penalty(args, ds.T)
    out = _out(args)
    try:
        sol, rep = solve_sgfl(ds, pen, _hybrid(args))
    except SolverError as e:
        rep = e.report or SolverReport()
        rep.flag(f"fatal: {e}")
        if e.solution is not None:
            _write_fit(out, e.solution, rep, args.dense)
        else:
            io.write_json(rep.to_dict(), out / "report.json")
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    _write_fit(out, sol, rep, args.dense)
    return EXIT_OK


def cmd_path(args) -> int:
    ds = _data(args)
    weights = io.read_weights(args.weights, ds.T)
    grid = build_grid(ds, args.grid_n1, args.grid_n2, args.grid_scale, args.grid_floor,
                      alpha=args.alpha)
    gammas = _floats(args.gamma_list) or [1.0]
    pts = fit_path(ds, grid, args.alpha, weights, _hybrid(args), threads=args.threads,
                   seed=args.seed)
    table = path_table(ds, pts, gammas)
    truth = Path(args.truth) if args.truth else None
    tseg = io.read_segmentation(truth / "truth_segmentation.json") if truth else None
    for rec, pt in zip(table, pts):
        rec["change_points"] = (";".join(map(str, pt.solution.segmentation.change_points()))
                                if pt.solution is not None else "")
        if tseg is not None and pt.solution is not None:
            rec["hausdorff"] = hausdorff_distance(pt.solution.segmentation.change_points(),
                                                  tseg.change_points(), ds.T)
    out = _out(args)
    cols = ["i", "j", "lambda1", "lambda2", "status", "objective", "K", "sparsity"]
    cols += [f"hbic_{g:g}" for g in gammas] + ["bic", "change_points"]
    if tseg is not None:
        cols.append("hausdorff")
    with open(out / "path.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for rec in table:
            w.writerow({k: _cell(v) for k, v in rec.items()})
    sel_dir = out / "selected"
    sel_dir.mkdir(exist_ok=True)
    selections = {}
    for col in [f"hbic_{g:g}" for g in gammas] + ["bic"]:
        try:
            k = select(table, col)
        except ValueError:
            continue
        selections[col] = {"row": k, "lambda1": table[k]["lambda1"],
                           "lambda2": table[k]["lambda2"]}
        io.write_coefficients(pts[k].solution, sel_dir / f"{col}.csv")
    io.write_json(selections, out / "selection.json")
    failed = [f"({p.i},{p.j}): {p.error}" for p in pts if not p.ok]
    if failed:
        io.write_json({"failed": failed}, out / "failures.json")
        return EXIT_SOLVER
    return EXIT_OK


def _time_to(times, values, target, rel):
    for t, v in zip(times, values):
        if v - target <= rel * abs(target):
            return t
    return float("nan")


def _run_method(name, ds, pen, args):
    t0 = time.perf_counter()
    if name.startswith("hybrid"):
        sweep = "random" if name == "hybrid-r" else "cyclic"
        times, vals = [], []
        cb = lambda stage, s: (times.append(time.perf_counter() - t0), vals.append(s.objective))  # noqa: E731
        sol, rep = solve_sgfl(ds, pen, _hybrid(args, sweep), callback=cb)
        return {"final": sol.objective, "times": times, "values": vals, "tuning_time": 0.0,
                "wall_time": time.perf_counter() - t0, "flags": rep.flags}
    cfg = BaselineConfig(iterations=args.iterations)
    _, tr = BASELINES[name](ds, pen, cfg)
    return {"final": tr.best, "times": [tr.tuning_time + t for t in tr.times],
            "values": list(np.minimum.accumulate(tr.objective)),
            "tuning_time": tr.tuning_time, "wall_time": tr.wall_time, "flags": tr.flags,
            "tuning": {k: v for k, v in tr.tuning.items() if k not in ("trials", "schedule")}}


def cmd_benchmark(args) -> int:
    ds = _data(args)
    pen = _penalty(args, ds.T)
    methods = [m.strip().lower() for m in args.method.split(",") if m.strip()]
    for m in methods:
        if m not in BASELINES and m not in ("hybrid-c", "hybrid-r"):
            raise InputError(f"unknown method {m!r}")

    def job(m):
        try:
            return m, _run_method(m, ds, pen, args), ""
        except (SolverError, TuningError, FloatingPointError) as e:
            return m, None, str(e)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as ex:
            results = list(ex.map(job, methods))
    else:
        results = [job(m) for m in methods]
    ok = [r for _, r, _ in results if r is not None]
    if not ok:
        raise SolverError("every method failed")
    best = min(r["final"] for r in ok)
    rows = []
    for m, r, err in results:
        row = {"method": m, "status": "ok" if r else "failed", "error": err}
        if r:
            row.update({"final_objective": r["final"],
                        "rel_accuracy": (r["final"] - best) / abs(best) if best else r["final"],
                        "time_to_1e-6": _time_to(r["times"], r["values"], best, 1e-6),
                        "wall_time": r["wall_time"], "tuning_time": r["tuning_time"],
                        "flags": "; ".join(r["flags"])})
        rows.append(row)
    out = _out(args)
    cols = ["method", "status", "final_objective", "rel_accuracy", "time_to_1e-6",
            "wall_time", "tuning_time", "flags", "error"]
    with open(out / "benchmark.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows([{k: _cell(v) for k, v in r.items()} for r in rows])
    io.write_json({"best_objective": best, "rows": rows}, out / "benchmark.json")
    return EXIT_OK if len(ok) == len(results) else EXIT_SOLVER


def cmd_evaluate(args) -> int:
    ds = _data(args)
    if not args.fit or not args.truth:
        raise InputError("--fit and --truth are required")
    fit, truth = Path(args.fit), Path(args.truth)
    coef_file = fit / "coefficients.csv" if fit.is_dir() else fit
    sol = io.read_coefficients(coef_file)
    tsol = io.read_coefficients(truth / "truth_beta.csv")
    tseg = io.read_segmentation(truth / "truth_segmentation.json")
    if args.approximate:
        B = threshold_coefficients(sol.expand())
        sol = Solution.from_dense(B)
    m = evaluate_fit(ds, sol, tsol.expand(), tseg)
    rec = m.to_json()
    io.write_json(rec, _out(args) / "metrics.json")
    if m.flags:
        io.write_json({"flags": m.flags}, _out(args) / "metrics_flags.json")
    return EXIT_OK


def cmd_certify(args) -> int:
    ds = _data(args)
    pen = _penalty(args, ds.T)
    if not args.fit:
        raise InputError("--fit is required")
    fit = Path(args.fit)
    sol = io.read_coefficients(fit / "coefficients.csv" if fit.is_dir() else fit)
    if sol.T != ds.T or sol.p != ds.p:
        raise InputError("solution does not match the dataset dimensions")
    cert = min_norm_subgradient(sol, ds, pen, _hybrid(args))
    io.write_json({"norm": cert.norm, "tol": cert.tol, "passed": bool(cert.passed),
                   "chain_norms": [float(v) for v in cert.chain_norms],
                   "iterations": cert.n_iter}, _out(args) / "certificate.json")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "path": cmd_path,
            "benchmark": cmd_benchmark, "evaluate": cmd_evaluate, "certify": cmd_certify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgfl", description="Sparse group fused lasso toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=0)

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--data", help="dataset container directory or response CSV")
    solver.add_argument("--lambda1", type=float)
    solver.add_argument("--lambda2", type=float)
    solver.add_argument("--alpha", type=float, default=1.0)
    solver.add_argument("--weights", default="1", help="file of T-1 weights, or 1")
    solver.add_argument("--epsilon", type=float, default=1e-6)
    solver.add_argument("--sweep", choices=["cyclic", "random"], default="cyclic")
    solver.add_argument("--threads", type=int, default=1)

    s = sub.add_parser("simulate", parents=[common], help="draw a synthetic dataset")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--p", type=int, required=True)
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--change-points", default="", help="comma-separated, 1-based")
    s.add_argument("--sparsity", type=float, default=0.9)
    s.add_argument("--sigma", type=float, default=0.0)
    s.add_argument("--rho", type=float, default=0.0)

    f = sub.add_parser("fit", parents=[common, solver], help="solve one problem")
    f.add_argument("--dense", action="store_true", help="also write T x p coefficients")

    p = sub.add_parser("path", parents=[common, solver], help="solve over a grid")
    p.add_argument("--grid-n1", type=int, default=10)
    p.add_argument("--grid-n2", type=int, default=10)
    p.add_argument("--grid-scale", choices=["log", "linear"], default="log")
    p.add_argument("--grid-floor", type=float, default=0.01)
    p.add_argument("--gamma-list", default="1,2,3,4,5,6,7,8,9,10")
    p.add_argument("--truth", help="simulate output directory, adds a hausdorff column")

    b = sub.add_parser("benchmark", parents=[common, solver], help="compare solvers")
    b.add_argument("--method", default="hybrid-c,hybrid-r,pd,admm,ladmm")
    b.add_argument("--iterations", type=int, default=5000)

    e = sub.add_parser("evaluate", parents=[common], help="metrics against the truth")
    e.add_argument("--data", required=True)
    e.add_argument("--fit", help="fit output directory or coefficient CSV")
    e.add_argument("--truth", help="simulate output directory")
    e.add_argument("--approximate", action="store_true",
                   help="threshold dense solver output at 1e-8 scale first")

    c = sub.add_parser("certify", parents=[common, solver], help="minimal-norm subgradient")
    c.add_argument("--fit", help="fit output directory or coefficient CSV")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("--threads must be positive", file=sys.stderr)
        return EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except (InputError, DimensionError, ValueError, OSError, KeyError,
            json.JSONDecodeError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverError, TuningError, FloatingPointError) as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
