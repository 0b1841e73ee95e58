"""Command-line front end: ``graph-newton {solve,decompose,bench,compare-ddp,export}``.

Exit codes: 0 on success or convergence, 2 when ``solve`` hits its
iteration limit, 1 on any error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from .bench import FAMILIES, bench_csv, fit_slopes, run_bench
from .control import PRESETS, DdpVariant, build_chain, preset, run_ddp
from .exceptions import GraphError, OptimizationError
from .graph import forward_eval
from .kkt import assemble_kkt, write_matrix_market
from .newton import NewtonConfig, optimize
from .problem_io import ProblemFormatError, dump_problem, load_problem
from .treedecomp import HEURISTICS, check_edge_separation, decompose, moralize, validate_decomposition

__all__ = ["main", "build_parser"]


def _add_problem_args(p, required=True):
    src = p.add_mutually_exclusive_group(required=required)
    src.add_argument("path", nargs="?", help="problem JSON file")
    src.add_argument("--preset", choices=sorted(PRESETS), help="built-in control problem")
    p.add_argument("--n", type=int, dest="horizon", help="preset horizon")
    p.add_argument("--dt", type=float, help="preset time step")
    p.add_argument("--weights", type=json.loads, help='preset weights as JSON, e.g. \'{"r": 0.1}\'')


def _add_newton_args(p):
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=100, dest="max_iter")
    p.add_argument("--heuristic", choices=HEURISTICS, default="min-fill")


def build_parser():
    ap = argparse.ArgumentParser(prog="graph-newton",
                                 description="Graphical Newton solver, tree decompositions and benchmarks.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run graphical Newton on a problem")
    _add_problem_args(p)
    _add_newton_args(p)
    p.add_argument("--solver", choices=("tree", "dense"), default="tree")
    p.add_argument("--trace", help="write the iteration trace CSV here (default: stdout)")
    p.add_argument("--out", help="write the final inputs as JSON here")
    p.add_argument("--export-kkt", dest="export_kkt",
                   help="write the KKT matrix at the initial point in Matrix-Market format")

    p = sub.add_parser("decompose", help="print a tree decomposition of the moralized graph")
    _add_problem_args(p)
    p.add_argument("--heuristic", choices=HEURISTICS, default="min-fill")
    p.add_argument("--check-separation", action="store_true", dest="check_separation")
    p.add_argument("--out")

    p = sub.add_parser("bench", help="time tree and dense KKT solves over a size sweep")
    p.add_argument("--family", choices=FAMILIES, default="oc-chain")
    p.add_argument("--n", nargs="+", default=["32", "64", "128", "256", "512", "1024"],
                   help="sizes, space- or comma-separated")
    p.add_argument("--solvers", default="tree,dense")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--dense-cap", type=int, default=3000, dest="dense_cap")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallel", action="store_true")
    p.add_argument("--no-optimize", action="store_true", dest="no_optimize",
                   help="skip the Newton run that fills iters/final_grad_inf")
    p.add_argument("--out")

    p = sub.add_parser("compare-ddp", help="per-iteration comparison of the DDP variants and Newton")
    p.add_argument("--preset", choices=sorted(PRESETS), default="pendulum-swingup")
    p.add_argument("--n", type=int, dest="horizon")
    p.add_argument("--dt", type=float)
    p.add_argument("--weights", type=json.loads)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=("zeros", "random"), default="zeros")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=100, dest="max_iter")
    p.add_argument("--out")

    p = sub.add_parser("export", help="write a preset as a problem JSON file")
    p.add_argument("--preset", choices=sorted(PRESETS), required=True)
    p.add_argument("--n", type=int, dest="horizon")
    p.add_argument("--dt", type=float)
    p.add_argument("--weights", type=json.loads)
    p.add_argument("--out")
    return ap


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _problem(args):
    if getattr(args, "preset", None):
        oc = preset(args.preset, n=args.horizon, dt=args.dt, weights=args.weights)
        g = build_chain(oc)
        return g, {v: np.zeros(g.dim(v)) for v in g.input_ids}
    return load_problem(args.path)


def _cmd_solve(args):
    g, x0 = _problem(args)
    if args.export_kkt:
        write_matrix_market(assemble_kkt(g, forward_eval(g, x0)), args.export_kkt)
    cfg = NewtonConfig(tol=args.tol, max_iters=args.max_iter, solver=args.solver,
                       heuristic=args.heuristic)
    x, trace = optimize(g, x0, cfg)
    _emit(trace.to_csv(), args.trace)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({v: x[v].tolist() for v in g.input_ids}, fh, indent=2)
    last = trace.records[-1]
    print(f"status={trace.status} iters={trace.n_iter} objective={last.objective:.12g} "
          f"grad_inf={last.grad_inf:.3e}", file=sys.stderr)
    return 0 if trace.status == "converged" else 2


def _cmd_decompose(args):
    g, _ = _problem(args)
    h = moralize(g)
    td = decompose(h, args.heuristic)
    bad = validate_decomposition(h, td)
    if bad:
        raise RuntimeError("internal error, invalid decomposition: " + "; ".join(map(str, bad)))
    doc = td.to_json()
    doc["heuristic"] = args.heuristic
    doc["widths"] = {hname: decompose(h, hname).width for hname in HEURISTICS}
    if args.check_separation:
        ok = all(check_edge_separation(h, td, e) for e in td.edges)
        doc["separation_ok"] = ok
        if not ok:
            _emit(json.dumps(doc, indent=2) + "\n", args.out)
            raise RuntimeError("edge separation failed on a validated decomposition")
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return 0


def _parse_sizes(tokens):
    out = []
    for t in tokens:
        out += [int(x) for x in str(t).split(",") if x.strip()]
    return out


def _cmd_bench(args):
    solvers = tuple(s.strip() for s in args.solvers.split(",") if s.strip())
    for s in solvers:
        if s not in ("tree", "dense"):
            raise ValueError(f"unknown solver {s!r}")
    rows = run_bench(args.family, _parse_sizes(args.n), solvers=solvers, reps=args.reps,
                     dense_cap=args.dense_cap, seed=args.seed, parallel=args.parallel,
                     run_optimize=not args.no_optimize)
    _emit(bench_csv(rows), args.out)
    for solver, slope in fit_slopes(rows).items():
        print(f"# log-log slope {solver}: {slope:.3f}", file=sys.stderr)
    return 0


def compare_ddp_table(oc, u0, cfg):
    """Wide per-iteration table: ``iter`` then ``<method>_objective,<method>_grad_inf``."""
    g = build_chain(oc)
    inputs = {f"u{i}": u0[i] for i in range(oc.horizon)}
    traces = {"newton": optimize(g, inputs, cfg)[1]}
    for v in DdpVariant:
        traces[v.value] = run_ddp(oc, u0, v, cfg)[1]
    header = ["iter"]
    for name in traces:
        header += [f"{name}_objective", f"{name}_grad_inf"]
    rows = []
    for it in range(max(len(t) for t in traces.values())):
        row = [it]
        for t in traces.values():
            if it < len(t):
                row += [repr(t.records[it].objective), repr(t.records[it].grad_inf)]
            else:
                row += ["", ""]
        rows.append(row)
    return header, rows, traces


def _cmd_compare(args):
    oc = preset(args.preset, n=args.horizon, dt=args.dt, weights=args.weights)
    rng = np.random.default_rng(args.seed)
    u0 = np.zeros((oc.horizon, oc.nu)) if args.init == "zeros" else 0.1 * rng.normal(size=(oc.horizon, oc.nu))
    cfg = NewtonConfig(tol=args.tol, max_iters=args.max_iter)
    header, rows, _ = compare_ddp_table(oc, u0, cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    _emit(buf.getvalue(), args.out)
    return 0


def _cmd_export(args):
    oc = preset(args.preset, n=args.horizon, dt=args.dt, weights=args.weights)
    g = build_chain(oc)
    doc = dump_problem(g, {v: np.zeros(g.dim(v)) for v in g.input_ids})
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return 0


COMMANDS = {"solve": _cmd_solve, "decompose": _cmd_decompose, "bench": _cmd_bench,
            "compare-ddp": _cmd_compare, "export": _cmd_export}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ProblemFormatError, GraphError, OptimizationError, ValueError, OSError,
            ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
