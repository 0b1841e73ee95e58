"""Discrete-time optimal control chains and the DDP family of solvers.

The problem is ``min_u sum_i l_i(x_i, u_i) + l_n(x_n)`` subject to
``x_{i+1} = f(x_i, u_i)`` with a fixed initial state.  :func:`build_chain`
turns it into a computational graph whose inputs are the controls.  The
backward pass below is the hand-derived elimination of that graph's KKT
system in the order ``x_n, u_{n-1}, x_{n-1}, ..., u_0``.  It serves as an
independent reference for the general machinery.

The variants differ only in the multiplier ``lam_i`` weighting the
curvature of the dynamics that produce ``x_{i+1}``, and in how the step is
rolled out:

==========================  ============================  ============
variant                     ``lam_i``                     forward pass
==========================  ============================  ============
``ddp``                     value gradient ``V_x[i+1]``   nonlinear
``stagewise-newton``        ``dJ/dx_{i+1}``               linear
``nonlinear-stagewise``     ``dJ/dx_{i+1}``               nonlinear
``ilqr``                    ``0``                         nonlinear
==========================  ============================  ============
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg

from .autodiff import reverse_grad
from .exceptions import LinesearchFailError, NonDescentError, SingularQuuError
from .functions import Affine, FixFirst, FixFirstObjective, Pendulum, Quadratic, Terms
from .graph import CompGraph, NodeSpec, forward_eval, objective_value, stack_inputs
from .newton import IterationRecord, IterationTrace, NewtonConfig, armijo_backtrack, mu_schedule

__all__ = [
    "OcProblem",
    "Trajectory",
    "BackwardPassResult",
    "DdpVariant",
    "PRESETS",
    "preset",
    "build_chain",
    "control_ids",
    "lqr_elimination_order",
    "rollout",
    "ddp_backward",
    "ddp_forward",
    "run_ddp",
]


@dataclass(frozen=True)
class OcProblem:
    """Finite-horizon problem ``(f, l_0..l_{n-1}, l_n, x0)`` with shared stage loss.

    ``stage_loss`` reads ``(x, u)`` and ``terminal_loss`` reads ``x``.
    """

    horizon: int
    nx: int
    nu: int
    dynamics: object
    stage_loss: object
    terminal_loss: object
    x0: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.x0.size != self.nx:
            raise ValueError(f"x0 has length {self.x0.size}, expected {self.nx}")
        if tuple(self.dynamics.in_dims) != (self.nx, self.nu) or self.dynamics.out_dim != self.nx:
            raise ValueError("dynamics must map (x, u) to x")
        if tuple(self.stage_loss.in_dims) != (self.nx, self.nu):
            raise ValueError("stage loss must read (x, u)")
        if tuple(self.terminal_loss.in_dims) != (self.nx,):
            raise ValueError("terminal loss must read x")


@dataclass
class Trajectory:
    x: np.ndarray  # (n + 1, nx)
    u: np.ndarray  # (n, nu)


@dataclass
class BackwardPassResult:
    """Per-stage quantities of one backward pass; ``V_xx``/``V_x`` run over stages 0..n."""

    Q_xx: list
    Q_ux: list
    Q_uu: list
    q_x: list
    q_u: list
    K: list
    k: list
    V_xx: list
    V_x: list
    lam: list
    mu: float = 0.0


class DdpVariant(str, Enum):
    DDP = "ddp"
    STAGEWISE_NEWTON = "stagewise-newton"
    NONLINEAR_STAGEWISE_NEWTON = "nonlinear-stagewise"
    ILQR = "ilqr"

    @property
    def forward_mode(self):
        return "linear" if self is DdpVariant.STAGEWISE_NEWTON else "nonlinear"

    @property
    def lam_rule(self):
        return {DdpVariant.DDP: "value", DdpVariant.ILQR: "zero"}.get(self, "total")


# --------------------------------------------------------------------------
# presets


def _lqr_scalar(n=1, weights=None, x0=None, **_):
    w = {"q": 1.0, "r": 1.0, "qf": 1.0, **(weights or {})}
    return OcProblem(
        n, 1, 1,
        Affine([[1.0, 1.0]], in_dims=(1, 1)),
        Quadratic([w["q"], w["r"]], in_dims=(1, 1)),
        Quadratic(w["qf"], in_dims=(1,)),
        [1.0] if x0 is None else x0,
        "lqr-scalar",
    )


def _lqr_mimo(n=20, dt=0.1, weights=None, x0=None, **_):
    w = {"q": 1.0, "r": 0.1, "qf": 10.0, **(weights or {})}
    A = np.array([[1, dt, 0, 0], [0, 1, 0, 0], [0, 0, 1, dt], [0, 0, 0, 1]], dtype=float)
    A[1, 2] = 0.1 * dt  # weak coupling between the two axes
    B = np.array([[0, 0], [dt, 0], [0, 0], [0.2 * dt, dt]])
    return OcProblem(
        n, 4, 2,
        Affine(np.hstack([A, B]), in_dims=(4, 2)),
        Quadratic([w["q"]] * 4 + [w["r"]] * 2, in_dims=(4, 2)),
        Quadratic(w["qf"], in_dims=(4,)),
        [1.0, 0.0, -1.0, 0.5] if x0 is None else x0,
        "lqr-mimo",
    )


def _pendulum(n=20, dt=0.1, weights=None, x0=None, **_):
    w = {"q": 0.1, "r": 0.05, "qf": 10.0, **(weights or {})}
    goal = [math.pi, 0.0]
    return OcProblem(
        n, 2, 1,
        Pendulum(dt=dt, damping=0.1),
        Quadratic([w["q"], w["q"], w["r"]], target=goal + [0.0], in_dims=(2, 1)),
        Quadratic(w["qf"], target=goal, in_dims=(2,)),
        [0.0, 0.0] if x0 is None else x0,
        "pendulum-swingup",
    )


PRESETS = {"lqr-scalar": _lqr_scalar, "lqr-mimo": _lqr_mimo, "pendulum-swingup": _pendulum}


def preset(name, n=None, dt=None, weights=None, x0=None):
    """Named problem instance; ``n``, ``dt``, ``weights`` (``q``, ``r``, ``qf``) override defaults."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kw = {k: v for k, v in {"n": n, "dt": dt, "weights": weights, "x0": x0}.items() if v is not None}
    return PRESETS[name](**kw)


# --------------------------------------------------------------------------
# graph construction


def control_ids(oc):
    return tuple(f"u{i}" for i in range(oc.horizon))


def lqr_elimination_order(oc):
    """``x_n, u_{n-1}, x_{n-1}, ..., x_1, u_0``."""
    out = []
    for i in range(oc.horizon, 0, -1):
        out += [f"x{i}", f"u{i - 1}"]
    return out


def build_chain(oc):
    """Computational graph of the chain with the controls as its only inputs.

    ``x1`` reads ``u0`` alone, with ``x0`` frozen into its node function.
    The loss ``l_i`` is attached to ``x_{i+1}`` as a family objective (to
    ``u0`` for ``i = 0``) and ``l_n`` is added to ``x_n``.
    """
    n, nx, nu = oc.horizon, oc.nx, oc.nu
    nodes = []
    for i in range(n):
        u = f"u{i}"
        obj_u = FixFirstObjective(oc.stage_loss, oc.x0) if i == 0 else None
        nodes.append(NodeSpec(u, nu, objective=obj_u))
        x = f"x{i + 1}"
        if i == 0:
            func, parents, dims = FixFirst(oc.dynamics, oc.x0), (u,), (nx, nu)
            terms = []
        else:
            func, parents, dims = oc.dynamics, (f"x{i}", u), (nx, nx, nu)
            terms = [(oc.stage_loss, [1, 2])]
        if i == n - 1:
            terms.append((oc.terminal_loss, [0]))
        obj = Terms(terms, dims, scope="family") if terms else None
        nodes.append(NodeSpec(x, nx, parents, func, obj))
    return CompGraph(nodes).check()


def rollout(oc, u):
    """Simulate the dynamics from ``x0`` under the controls ``u`` of shape ``(n, nu)``."""
    u = np.asarray(u, dtype=float).reshape(oc.horizon, oc.nu)
    x = np.empty((oc.horizon + 1, oc.nx))
    x[0] = oc.x0
    for i in range(oc.horizon):
        x[i + 1] = oc.dynamics.value([x[i], u[i]])
    return Trajectory(x, u.copy())


def _controls_dict(oc, u):
    return {f"u{i}": np.asarray(u[i], dtype=float) for i in range(oc.horizon)}


def _cost_and_grad(oc, g, u):
    s = forward_eval(g, _controls_dict(oc, u))
    duals = reverse_grad(g, s)
    return objective_value(g, s), stack_inputs(g, duals), duals


# --------------------------------------------------------------------------
# backward and forward passes


def ddp_backward(oc, traj, variant, mu=0.0, g=None):
    """Value recursion from ``V_n = l_n`` down to stage 0.

    Parameters
    ----------
    oc : OcProblem
    traj : Trajectory
        Nominal rollout.
    variant : DdpVariant or str
    mu : float
        Shift added to every ``Q_uu``.
    g : CompGraph, optional
        Chain graph used for the total-derivative multipliers.

    Raises
    ------
    SingularQuuError
        If some ``Q_uu`` is not positive definite.
    """
    variant = DdpVariant(variant)
    n, nx, nu = oc.horizon, oc.nx, oc.nu
    lam_total = None
    if variant.lam_rule == "total":
        g = g or build_chain(oc)
        duals = reverse_grad(g, forward_eval(g, _controls_dict(oc, traj.u)))
        lam_total = [duals[f"x{i + 1}"] for i in range(n)]
    V_xx = [None] * (n + 1)
    V_x = [None] * (n + 1)
    V_xx[n] = np.asarray(oc.terminal_loss.hessian_flat(traj.x[n]), dtype=float)
    V_x[n] = np.asarray(oc.terminal_loss.gradient_flat(traj.x[n]), dtype=float)
    out = {key: [None] * n for key in ("Q_xx", "Q_ux", "Q_uu", "q_x", "q_u", "K", "k", "lam")}
    for i in range(n - 1, -1, -1):
        x, u = traj.x[i], traj.u[i]
        fx, fu = oc.dynamics.jacobian([x, u])
        z = np.concatenate([x, u])
        lg = oc.stage_loss.gradient_flat(z)
        lh = oc.stage_loss.hessian_flat(z)
        if variant.lam_rule == "total":
            lam = lam_total[i]
        elif variant.lam_rule == "value":
            lam = V_x[i + 1]
        else:
            lam = np.zeros(nx)
        H = lh + oc.dynamics.weighted_hessian([x, u], lam)
        Vn, vn = V_xx[i + 1], V_x[i + 1]
        Qxx = H[:nx, :nx] + fx.T @ Vn @ fx
        Qux = H[nx:, :nx] + fu.T @ Vn @ fx
        Quu = H[nx:, nx:] + fu.T @ Vn @ fu + mu * np.eye(nu)
        Quu = 0.5 * (Quu + Quu.T)
        qx = lg[:nx] + fx.T @ vn
        qu = lg[nx:] + fu.T @ vn
        try:
            c = scipy.linalg.cho_factor(Quu)
        except np.linalg.LinAlgError:
            raise SingularQuuError(i) from None
        K = -scipy.linalg.cho_solve(c, Qux)
        k = -scipy.linalg.cho_solve(c, qu)
        Vxx = Qxx + Qux.T @ K
        V_xx[i] = 0.5 * (Vxx + Vxx.T)
        V_x[i] = qx + Qux.T @ k
        for key, val in zip(("Q_xx", "Q_ux", "Q_uu", "q_x", "q_u", "K", "k", "lam"),
                            (Qxx, Qux, Quu, qx, qu, K, k, lam)):
            out[key][i] = val
    return BackwardPassResult(V_xx=V_xx, V_x=V_x, mu=mu, **out)


def ddp_forward(oc, traj, bp, mode, eta=1.0):
    """Roll out the step of a backward pass.

    ``mode="linear"`` propagates ``dx`` through the linearized dynamics and
    scales the whole step by ``eta``.  ``mode="nonlinear"`` simulates the
    true dynamics under ``u_i + eta k_i + K_i (x_new_i - x_i)``.

    Returns
    -------
    new : Trajectory
        Rollout of the updated controls; always exactly feasible.
    du : ndarray of shape (n, nu)
    """
    n = oc.horizon
    du = np.zeros_like(traj.u)
    if mode == "linear":
        dx = np.zeros(oc.nx)
        for i in range(n):
            du[i] = bp.k[i] + bp.K[i] @ dx
            fx, fu = oc.dynamics.jacobian([traj.x[i], traj.u[i]])
            dx = fx @ dx + fu @ du[i]
        du *= eta
        return rollout(oc, traj.u + du), du
    if mode != "nonlinear":
        raise ValueError(f"mode must be 'linear' or 'nonlinear', got {mode!r}")
    x = np.empty_like(traj.x)
    u = np.empty_like(traj.u)
    x[0] = oc.x0
    for i in range(n):
        u[i] = traj.u[i] + eta * bp.k[i] + bp.K[i] @ (x[i] - traj.x[i])
        x[i + 1] = oc.dynamics.value([x[i], u[i]])
    return Trajectory(x, u), u - traj.u


def run_ddp(oc, u_init, variant, cfg=None):
    """Iterate backward and forward passes with Armijo backtracking.

    Regularization uses the same ``mu`` schedule as graphical Newton: a
    ``mu`` is accepted once every ``Q_uu`` is positive definite and the
    linearized step is a descent direction.

    Returns
    -------
    u : ndarray of shape (n, nu)
    trace : IterationTrace
    """
    cfg = cfg or NewtonConfig()
    variant = DdpVariant(variant)
    g = build_chain(oc)
    u = np.array(u_init, dtype=float).reshape(oc.horizon, oc.nu)
    trace = IterationTrace()
    for it in range(cfg.max_iters + 1):
        f0, grad, _ = _cost_and_grad(oc, g, u)
        ginf = float(np.max(np.abs(grad), initial=0.0))
        rec = IterationRecord(it, f0, ginf, math.nan, math.nan, math.nan, 0.0,
                              _controls_dict(oc, u.copy()), 0.0)
        trace.records.append(rec)
        if ginf <= cfg.tol:
            trace.status = "converged"
            break
        if it == cfg.max_iters:
            trace.status = "max_iter"
            break
        traj = rollout(oc, u)
        chosen = None
        for mu in mu_schedule(cfg):
            try:
                bp = ddp_backward(oc, traj, variant, mu=mu, g=g)
            except SingularQuuError:
                continue
            du_lin = ddp_forward(oc, traj, bp, "linear")[1]
            gtd = float(grad @ du_lin.ravel())
            if gtd < 0:
                chosen = (mu, bp, du_lin, gtd)
                break
        if chosen is None:
            trace.status = "failed"
            raise NonDescentError(f"no descent step up to mu={cfg.mu_max:g}", trace)
        mu, bp, du_lin, gtd = chosen

        if variant.forward_mode == "linear":
            def phi(eta):
                with np.errstate(all="ignore"):
                    return _cost_and_grad(oc, g, u + eta * du_lin)[0]
        else:
            def phi(eta):
                with np.errstate(all="ignore"):
                    new, _ = ddp_forward(oc, traj, bp, "nonlinear", eta)
                    return _cost_and_grad(oc, g, new.u)[0]
        try:
            eta, _ = armijo_backtrack(phi, f0, gtd, cfg)
        except LinesearchFailError as exc:
            trace.status = "failed"
            exc.trace = trace
            raise
        if variant.forward_mode == "linear":
            u = u + eta * du_lin
        else:
            u = ddp_forward(oc, traj, bp, "nonlinear", eta)[0].u
        rec.eta, rec.mu = eta, mu
    return u, trace
