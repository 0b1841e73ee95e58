"""scikit-learn style wrappers around the solvers.

The estimators follow the usual conventions: constructor arguments are
stored verbatim and exposed through ``get_params``/``set_params``, ``fit``
returns ``self``, and fitted state lives in trailing-underscore attributes.
``fit`` takes a graph (or control problem) where sklearn would take ``X``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .autodiff import reverse_grad
from .control import DdpVariant, OcProblem, run_ddp
from .exceptions import DimensionError
from .graph import CompGraph, forward_eval, objective_value, stack_inputs
from .newton import NewtonConfig, optimize
from .treedecomp import Hypergraph, decompose, moralize, validate_decomposition

__all__ = ["check_graph", "check_inputs", "GraphNewton", "DDPSolver", "TreeDecomposer"]


def check_graph(g):
    """Return ``g`` after verifying every structural invariant (raises ``GraphError``)."""
    if not isinstance(g, CompGraph):
        raise TypeError(f"expected a CompGraph, got {type(g).__name__}")
    return g.check()


def check_inputs(g, inputs=None):
    """Normalize ``inputs`` to float vectors over exactly the input nodes.

    ``None`` means zeros.  A flat array is split in input order.
    """
    if inputs is None:
        return {v: np.zeros(g.dim(v)) for v in g.input_ids}
    if not isinstance(inputs, dict):
        arr = np.asarray(inputs, dtype=float).reshape(-1)
        if arr.size != g.n_inputs_total:
            raise DimensionError("<inputs>", f"flat vector has length {arr.size}, expected {g.n_inputs_total}")
        inputs, o = {}, 0
        for v in g.input_ids:
            inputs[v] = arr[o:o + g.dim(v)]
            o += g.dim(v)
    extra = set(inputs) - set(g.input_ids)
    if extra:
        raise DimensionError(sorted(extra)[0], "is not an input node")
    out = {}
    for v in g.input_ids:
        if v not in inputs:
            raise DimensionError(v, "input state missing")
        a = np.asarray(inputs[v], dtype=float).reshape(-1)
        if a.size != g.dim(v):
            raise DimensionError(v, f"expected length {g.dim(v)}, got {a.size}")
        if not np.all(np.isfinite(a)):
            raise DimensionError(v, "input contains non-finite values")
        out[v] = a.copy()
    return out


class GraphNewton(BaseEstimator):
    """Graphical Newton minimizer of a computational-graph objective.

    Parameters
    ----------
    tol : float, default=1e-8
    max_iter : int, default=100
    solver : {"tree", "dense"}, default="tree"
    heuristic : {"min-fill", "min-degree"}, default="min-fill"
    armijo, shrink : float
    max_backtracks : int
    mu0, mu_growth, mu_max : float

    Attributes
    ----------
    inputs_ : dict
        Minimizing input states.
    states_ : dict
        Full assignment at ``inputs_``.
    objective_ : float
    gradient_ : ndarray
    trace_ : IterationTrace
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, tol=1e-8, max_iter=100, solver="tree", heuristic="min-fill", armijo=1e-4,
                 shrink=0.5, max_backtracks=40, mu0=1e-6, mu_growth=10.0, mu_max=1e6):
        self.tol = tol
        self.max_iter = max_iter
        self.solver = solver
        self.heuristic = heuristic
        self.armijo = armijo
        self.shrink = shrink
        self.max_backtracks = max_backtracks
        self.mu0 = mu0
        self.mu_growth = mu_growth
        self.mu_max = mu_max

    def _config(self):
        return NewtonConfig(tol=self.tol, max_iters=self.max_iter, armijo=self.armijo,
                            shrink=self.shrink, max_backtracks=self.max_backtracks, mu0=self.mu0,
                            mu_growth=self.mu_growth, mu_max=self.mu_max, solver=self.solver,
                            heuristic=self.heuristic)

    def fit(self, graph, inputs=None):
        g = check_graph(graph)
        x0 = check_inputs(g, inputs)
        x, trace = optimize(g, x0, self._config())
        self.graph_ = g
        self.inputs_ = x
        self.states_ = forward_eval(g, x)
        self.trace_ = trace
        self.n_iter_ = trace.n_iter
        self.converged_ = trace.status == "converged"
        self.objective_ = trace.records[-1].objective
        self.gradient_ = stack_inputs(g, reverse_grad(g, self.states_))
        return self

    def score(self, graph=None, inputs=None):
        """Negative objective at the fitted (or given) inputs; higher is better."""
        check_is_fitted(self, "inputs_")
        g = self.graph_ if graph is None else check_graph(graph)
        x = self.inputs_ if inputs is None else check_inputs(g, inputs)
        return -objective_value(g, forward_eval(g, x))


class DDPSolver(BaseEstimator):
    """One of the DDP variants on an :class:`OcProblem`.

    Attributes
    ----------
    controls_ : ndarray of shape (n, nu)
    trace_ : IterationTrace
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, variant="stagewise-newton", tol=1e-8, max_iter=100):
        self.variant = variant
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, problem, u_init=None):
        if not isinstance(problem, OcProblem):
            raise TypeError(f"expected an OcProblem, got {type(problem).__name__}")
        variant = DdpVariant(self.variant)
        u0 = np.zeros((problem.horizon, problem.nu)) if u_init is None else np.asarray(u_init, dtype=float)
        if u0.size != problem.horizon * problem.nu:
            raise DimensionError("<controls>", f"expected {problem.horizon * problem.nu} values, got {u0.size}")
        u, trace = run_ddp(problem, u0.reshape(problem.horizon, problem.nu), variant,
                           NewtonConfig(tol=self.tol, max_iters=self.max_iter))
        self.controls_ = u
        self.trace_ = trace
        self.n_iter_ = trace.n_iter
        self.converged_ = trace.status == "converged"
        self.objective_ = trace.records[-1].objective
        return self


class TreeDecomposer(BaseEstimator):
    """Heuristic tree decomposition of a graph's moralization (or of a hypergraph).

    Attributes
    ----------
    decomposition_ : TreeDecomposition
    hypergraph_ : Hypergraph
    width_ : int
    n_bags_ : int
    """

    def __init__(self, heuristic="min-fill"):
        self.heuristic = heuristic

    def fit(self, graph):
        h = graph if isinstance(graph, Hypergraph) else moralize(check_graph(graph))
        td = decompose(h, self.heuristic)
        bad = validate_decomposition(h, td)
        if bad:
            raise RuntimeError("invalid decomposition: " + "; ".join(map(str, bad)))
        self.hypergraph_ = h
        self.decomposition_ = td
        self.width_ = td.width
        self.n_bags_ = len(td.bags)
        return self
