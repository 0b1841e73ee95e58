"""Scaling benchmarks for the tree and dense KKT solvers.

Families
--------
``oc-chain``
    The ``lqr-mimo`` control chain with horizon ``n`` (width 2, ``~n`` bags).
``random-tree``
    ``n`` nodes; node ``i`` reads one earlier node chosen uniformly, through
    a ``tanh_affine`` map.  Dimensions are drawn from 1..3 and every node
    carries a quadratic loss.
``grid-k``
    ``n`` rows times 8 columns of scalar nodes.  Column 0 holds the inputs
    and node ``(r, c)`` reads ``(r, c-1)`` and ``(r-1, c)``, so the width
    grows with ``n`` while the length stays fixed.

Timings are the median of ``reps`` runs after one discarded warm-up run.
Each solver is timed on the full operation the Newton driver performs with
it: the step together with the KKT inertia used to accept or regularize
it.  Materializing the dense matrix counts toward the dense solver's
assembly time.
"""

from __future__ import annotations

import csv
import io
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .control import build_chain, preset
from .functions import Quadratic, TanhAffine
from .graph import CompGraph, NodeSpec, forward_eval
from .kkt import assemble_kkt, dense_solve_matrix
from .mpsolver import solve_kkt_tree
from .newton import NewtonConfig, optimize
from .treedecomp import decompose, moralize

__all__ = ["FAMILIES", "BenchRow", "make_instance", "run_bench", "fit_slopes", "bench_csv",
           "thread_cap", "BENCH_COLUMNS", "DENSE_CAP"]

FAMILIES = ("oc-chain", "random-tree", "grid-k")
BENCH_COLUMNS = ("family", "n", "solver", "width", "bags", "assemble_ms", "solve_ms", "total_ms",
                 "iters", "final_grad_inf")
DENSE_CAP = 3000
GRID_COLUMNS = 8


@dataclass
class BenchRow:
    family: str
    n: int
    solver: str
    width: int
    bags: int
    assemble_ms: float
    solve_ms: float
    total_ms: float
    iters: int
    final_grad_inf: float


def thread_cap(default=None):
    """Worker cap from ``GRAPH_NEWTON_THREADS`` (falls back to the CPU count)."""
    raw = os.environ.get("GRAPH_NEWTON_THREADS")
    if raw:
        try:
            val = int(raw)
        except ValueError:
            raise ValueError(f"GRAPH_NEWTON_THREADS must be an integer, got {raw!r}") from None
        if val < 1:
            raise ValueError("GRAPH_NEWTON_THREADS must be at least 1")
        return val
    return default or os.cpu_count() or 1


def _random_tree(n, rng):
    nodes = []
    for i in range(n):
        d = int(rng.integers(1, 4))
        obj = Quadratic(rng.uniform(0.5, 2.0, d), target=rng.normal(size=d), in_dims=(d,))
        if i == 0:
            nodes.append(NodeSpec("v0", d, objective=obj))
            continue
        p = nodes[int(rng.integers(0, i))]
        A = rng.normal(size=(d, p.dim)) / np.sqrt(p.dim)
        nodes.append(NodeSpec(f"v{i}", d, (p.id,), TanhAffine(A, rng.normal(size=d) * 0.1, in_dims=(p.dim,)), obj))
    return CompGraph(nodes)


def _grid(k, rng, cols=GRID_COLUMNS):
    nodes = []
    for c in range(cols):
        for r in range(k):
            nid = f"g{r}_{c}"
            obj = Quadratic(1.0, target=rng.normal(size=1), in_dims=(1,))
            if c == 0:
                nodes.append(NodeSpec(nid, 1, objective=obj))
                continue
            parents = (f"g{r}_{c - 1}",) + ((f"g{r - 1}_{c}",) if r > 0 else ())
            A = rng.normal(size=(1, len(parents))) * 0.7
            nodes.append(NodeSpec(nid, 1, parents, TanhAffine(A, in_dims=(1,) * len(parents)), obj))
    return CompGraph(nodes)


def make_instance(family, n, seed=0):
    """``(graph, inputs)`` for one benchmark instance, seeded per ``(seed, n)``."""
    rng = np.random.default_rng([seed, n])
    if family == "oc-chain":
        oc = preset("lqr-mimo", n=n)
        g = build_chain(oc)
    elif family == "random-tree":
        g = _random_tree(n, rng)
    elif family == "grid-k":
        g = _grid(n, rng)
    else:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    g.check()
    inputs = {v: 0.1 * rng.normal(size=g.dim(v)) for v in g.input_ids}
    return g, inputs


def _median_ms(fn, reps):
    fn()  # warm-up
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(1e3 * (time.perf_counter() - t0))
    return statistics.median(times)


def _bench_instance(family, n, solvers, reps, dense_cap, seed, run_optimize, max_iters):
    g, inputs = make_instance(family, n, seed)
    td = decompose(moralize(g))
    s = forward_eval(g, inputs)
    k = assemble_kkt(g, s)
    rows = []
    for solver in solvers:
        if solver == "dense" and k.size > dense_cap:
            continue
        if solver == "tree":
            assemble_ms = _median_ms(lambda: assemble_kkt(g, forward_eval(g, inputs)), reps)
            solve_ms = _median_ms(lambda: solve_kkt_tree(k, td, return_inertia=True), reps)
        else:
            assemble_ms = _median_ms(lambda: assemble_kkt(g, forward_eval(g, inputs)).to_dense(), reps)
            K, b = k.to_dense()
            solve_ms = _median_ms(lambda: dense_solve_matrix(K, b, return_inertia=True), reps)
        iters, ginf = 0, float("nan")
        if run_optimize:
            _, trace = optimize(g, inputs, NewtonConfig(solver=solver, max_iters=max_iters))
            iters, ginf = trace.n_iter, float(trace.records[-1].grad_inf)
        rows.append(BenchRow(family, n, solver, td.width, len(td.bags), assemble_ms, solve_ms,
                             assemble_ms + solve_ms, iters, ginf))
    return rows


def run_bench(family, ns, solvers=("tree", "dense"), reps=5, dense_cap=DENSE_CAP, seed=0,
              parallel=False, run_optimize=True, max_iters=50):
    """Benchmark every ``n`` in ``ns``; rows come back in ``(n, solver)`` order.

    With ``parallel=True`` instances run on a thread pool capped by
    :func:`thread_cap`, and BLAS is pinned to one thread per worker.
    """
    args = [(family, int(n), tuple(solvers), reps, dense_cap, seed, run_optimize, max_iters)
            for n in ns]
    if parallel:
        workers = min(thread_cap(), len(args)) or 1
        with threadpool_limits(limits=1), ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda a: _bench_instance(*a), args))
    else:
        with threadpool_limits(limits=thread_cap()):
            chunks = [_bench_instance(*a) for a in args]
    return [r for chunk in chunks for r in chunk]


def fit_slopes(rows, column="solve_ms", max_n=None):
    """Least-squares slope of ``log(column)`` against ``log(n)`` per solver.

    ``max_n`` may be a number or a ``{solver: cap}`` mapping.
    """
    out = {}
    for solver in sorted({r.solver for r in rows}):
        cap = max_n.get(solver) if isinstance(max_n, dict) else max_n
        pts = [(r.n, getattr(r, column)) for r in rows
               if r.solver == solver and (cap is None or r.n <= cap)]
        if len(pts) >= 2:
            x, y = np.log([p[0] for p in pts]), np.log([max(p[1], 1e-9) for p in pts])
            out[solver] = float(np.polyfit(x, y, 1)[0])
    return out


def bench_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        d = asdict(r)
        for key in ("assemble_ms", "solve_ms", "total_ms"):
            d[key] = f"{d[key]:.4f}"
        d["final_grad_inf"] = f"{d['final_grad_inf']:.6e}"
        w.writerow(d)
    return buf.getvalue()
