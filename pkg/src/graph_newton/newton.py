"""Graphical Newton: exact Newton steps on the inputs from the structured KKT solve.

Each iteration runs the forward pass and sets the duals by reverse-mode AD.
It then solves the KKT system and line-searches along the input step, and
nothing else is carried between iterations.  Non-input states are always
recomputed by forward evaluation, so every iterate is exactly feasible.

Globalization follows a Levenberg scheme.  Whenever the plain KKT system is
singular, has the wrong inertia, or yields a non-descent step, the system
is re-solved with ``mu * I`` added to the input blocks for an escalating
``mu``.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import reverse_grad
from .exceptions import LinesearchFailError, NonDescentError, SingularKKTError, SingularPivotError
from .graph import forward_eval, objective_value, split_inputs, stack_inputs
from .kkt import assemble_kkt, dense_kkt_solve, extract_input_step
from .mpsolver import solve_kkt_tree
from .treedecomp import decompose, moralize

__all__ = [
    "NewtonConfig",
    "IterationRecord",
    "IterationTrace",
    "newton_step",
    "linesearch",
    "armijo_backtrack",
    "mu_schedule",
    "optimize",
    "TRACE_COLUMNS",
]

TRACE_COLUMNS = ("iter", "objective", "grad_inf", "eta", "mu", "kkt_residual", "ms")
SOLVERS = ("tree", "dense")


@dataclass(frozen=True)
class NewtonConfig:
    """Stopping, linesearch and regularization settings.

    Parameters
    ----------
    tol : float
        Stop once ``||df/dS_X||_inf <= tol``.
    max_iters : int
    armijo, shrink : float
        Sufficient-decrease constant and backtracking factor.
    max_backtracks : int
    mu0, mu_growth, mu_max : float
        Regularization schedule ``0, mu0, mu0*growth, ...`` capped at ``mu_max``.
    solver : {"tree", "dense"}
    heuristic : {"min-fill", "min-degree"}
        Elimination heuristic for the tree solver's decomposition.
    """

    tol: float = 1e-8
    max_iters: int = 100
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 40
    mu0: float = 1e-6
    mu_growth: float = 10.0
    mu_max: float = 1e6
    solver: str = "tree"
    heuristic: str = "min-fill"

    def __post_init__(self):
        for name in ("tol", "armijo", "mu0", "mu_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not 0 < self.shrink < 1:
            raise ValueError(f"shrink must lie in (0, 1), got {self.shrink!r}")
        if not self.mu_growth > 1:
            raise ValueError(f"mu_growth must exceed 1, got {self.mu_growth!r}")
        if self.max_iters < 0 or self.max_backtracks < 0:
            raise ValueError("max_iters and max_backtracks must be non-negative")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")


def mu_schedule(cfg):
    """Regularization values tried in order: ``0`` then geometric up to ``mu_max``."""
    out = [0.0]
    mu = cfg.mu0
    while mu <= cfg.mu_max * (1 + 1e-12):
        out.append(mu)
        mu *= cfg.mu_growth
    return out


@dataclass
class IterationRecord:
    iter: int
    objective: float
    grad_inf: float
    eta: float
    mu: float
    kkt_residual: float
    ms: float
    inputs: dict = field(repr=False, default_factory=dict)
    h_inf: float = 0.0


@dataclass
class IterationTrace:
    """Per-iterate history; the last record holds the returned iterate."""

    records: list = field(default_factory=list)
    status: str = "running"

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def n_iter(self):
        """Number of steps taken."""
        return max(len(self.records) - 1, 0)

    def to_csv(self, target=None):
        """Write ``iter,objective,grad_inf,eta,mu,kkt_residual,ms``; returns the text if no target."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            d = asdict(r)
            w.writerow([r.iter] + [repr(float(d[c])) for c in TRACE_COLUMNS[1:]])
        text = buf.getvalue()
        if target is None:
            return text
        if hasattr(target, "write"):
            target.write(text)
        else:
            with open(target, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def _solve(k, solver, td):
    if solver == "dense":
        return dense_kkt_solve(k, return_inertia=True)
    return solve_kkt_tree(k, td, return_inertia=True)


def newton_step(g, inputs, cfg=None, td=None, state=None):
    """Regularized graphical Newton direction on the inputs.

    Parameters
    ----------
    g : CompGraph
    inputs : dict
    cfg : NewtonConfig, optional
    td : TreeDecomposition, optional
        Reused across calls by :func:`optimize`.
    state : tuple, optional
        Precomputed ``(s, duals)`` at ``inputs``.

    Returns
    -------
    step : dict
        Input perturbation.
    info : dict
        ``objective``, ``grad``, ``grad_inf``, ``mu``, ``kkt_residual``,
        ``gtd`` and ``inertia``.

    Raises
    ------
    NonDescentError
        If no value on the regularization schedule gives a usable step.
    """
    cfg = cfg or NewtonConfig()
    s, duals = state if state is not None else _state(g, inputs)
    grad = stack_inputs(g, duals)
    info = {"objective": objective_value(g, s), "grad": grad,
            "grad_inf": float(np.max(np.abs(grad), initial=0.0))}
    if info["grad_inf"] == 0.0:
        info.update(mu=0.0, kkt_residual=0.0, gtd=0.0, inertia=None)
        return {v: np.zeros(g.dim(v)) for v in g.input_ids}, info
    if cfg.solver == "tree" and td is None:
        td = decompose(moralize(g), cfg.heuristic)
    k = assemble_kkt(g, s, duals)
    expected = (k.n_primal, k.n_dual, 0)
    tried = []
    for mu in mu_schedule(cfg):
        kk = k if mu == 0 else k.regularized(mu)
        try:
            dS, lam, inertia = _solve(kk, cfg.solver, td)
        except (SingularPivotError, SingularKKTError):
            tried.append((mu, "singular"))
            continue
        if inertia != expected:
            tried.append((mu, f"inertia {inertia}"))
            continue
        step = extract_input_step((dS, lam), g.input_ids)
        gtd = float(grad @ stack_inputs(g, step))
        if not gtd < 0:
            tried.append((mu, "non-descent"))
            continue
        K, b = kk.to_sparse()
        res = float(np.max(np.abs(K @ kk.pack(dS, lam) - b), initial=0.0))
        info.update(mu=mu, kkt_residual=res, gtd=gtd, inertia=inertia)
        return step, info
    raise NonDescentError(f"no descent step up to mu={cfg.mu_max:g}; last attempts {tried[-3:]}")


def _state(g, inputs):
    s = forward_eval(g, inputs)
    return s, reverse_grad(g, s)


def armijo_backtrack(phi, f0, gtd, cfg):
    """Backtrack ``eta = 1, shrink, shrink^2, ...`` until Armijo holds for ``phi(eta)``.

    A slack of a few ulps of ``f0`` absorbs roundoff once the predicted
    decrease drops below machine precision.

    Returns
    -------
    eta, f_eta : float
    """
    if not gtd < 0:
        raise LinesearchFailError(f"direction is not a descent direction (g^T d = {gtd:.3e})")
    slack = 10 * np.finfo(float).eps * (1.0 + abs(f0))
    eta = 1.0
    for _ in range(cfg.max_backtracks + 1):
        f = phi(eta)
        if math.isfinite(f) and f <= f0 + cfg.armijo * eta * gtd + slack:
            return eta, f
        eta *= cfg.shrink
    raise LinesearchFailError(f"Armijo condition not met after {cfg.max_backtracks} backtracks")


def linesearch(g, inputs, step, cfg=None, f0=None, gtd=None):
    """Armijo step length along ``step``, evaluating only the substituted objective.

    Returns
    -------
    eta : float
    """
    cfg = cfg or NewtonConfig()
    if f0 is None or gtd is None:
        s, duals = _state(g, inputs)
        f0 = objective_value(g, s)
        gtd = float(stack_inputs(g, duals) @ stack_inputs(g, step))
    x0 = stack_inputs(g, inputs)
    d = stack_inputs(g, step)

    def phi(eta):
        with np.errstate(all="ignore"):
            return objective_value(g, forward_eval(g, split_inputs(g, x0 + eta * d)))

    return armijo_backtrack(phi, f0, gtd, cfg)[0]


def _h_inf(g, s):
    scale = 1.0 + max(float(np.max(np.abs(x), initial=0.0)) for x in s.values())
    worst = 0.0
    for v in g.noninput_ids:
        n = g[v]
        h = n.func.value([s[p] for p in n.parents]) - s[v]
        worst = max(worst, float(np.max(np.abs(h), initial=0.0)))
    return worst / scale


def optimize(g, inputs0, cfg=None):
    """Run graphical Newton from ``inputs0``.

    Returns
    -------
    inputs : dict
        Final iterate.
    trace : IterationTrace
        ``status`` is ``"converged"`` or ``"max_iter"``.

    Raises
    ------
    NonDescentError, LinesearchFailError
        With the partial trace attached as ``.trace``.
    """
    cfg = cfg or NewtonConfig()
    g.check()
    td = decompose(moralize(g), cfg.heuristic) if cfg.solver == "tree" else None
    x = {v: np.asarray(inputs0[v], dtype=float).reshape(-1).copy() for v in g.input_ids}
    trace = IterationTrace()
    for it in range(cfg.max_iters + 1):
        t0 = time.perf_counter()
        s, duals = _state(g, x)
        f0 = objective_value(g, s)
        grad = stack_inputs(g, duals)
        ginf = float(np.max(np.abs(grad), initial=0.0))
        rec = IterationRecord(it, f0, ginf, math.nan, math.nan, math.nan, 0.0,
                              {v: a.copy() for v, a in x.items()}, _h_inf(g, s))
        trace.records.append(rec)
        if ginf <= cfg.tol:
            trace.status = "converged"
            break
        if it == cfg.max_iters:
            trace.status = "max_iter"
            break
        try:
            step, info = newton_step(g, x, cfg, td=td, state=(s, duals))
            eta = linesearch(g, x, step, cfg, f0=f0, gtd=info["gtd"])
        except (NonDescentError, LinesearchFailError) as exc:
            trace.status = "failed"
            exc.trace = trace
            raise
        rec.eta, rec.mu, rec.kkt_residual = eta, info["mu"], info["kkt_residual"]
        x = {v: x[v] + eta * step[v] for v in g.input_ids}
        rec.ms = 1e3 * (time.perf_counter() - t0)
    return x, trace
