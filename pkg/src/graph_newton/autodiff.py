"""Reverse-mode gradients and Hessian-vector products over a computational graph.

The backward recursion visits nodes in reverse topological order::

    df/dS_v = sum_{s : v in members(s)} dl_s/dS_v + sum_{d in ch(v)} J_{d,v}^T df/dS_d

The Hessian-vector recursion first pushes an input perturbation forward
through the Jacobians and then differentiates the backward recursion once
more, which adds the local objective Hessians and the dual-weighted
curvature of every node function.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import DimensionError
from .graph import split_inputs, stack_inputs

__all__ = [
    "Linearization",
    "Tangent",
    "linearize",
    "partial_objective_gradient",
    "reverse_grad",
    "input_gradient",
    "curvatures",
    "hessian_vector",
    "accumulate_dense_hessian",
    "HessianAsymmetryWarning",
]

SYMMETRY_TOL = 1e-10


class HessianAsymmetryWarning(RuntimeWarning):
    """The accumulated Hessian is asymmetric beyond roundoff; a node derivative is likely wrong."""


@dataclass
class Linearization:
    """First/second derivatives of every node function and objective at one point."""

    jacobians: dict      # d -> list of blocks, one per parent
    obj_grads: dict      # owner -> gradient over concatenated members
    obj_hessians: dict   # owner -> Hessian over concatenated members


class Tangent(NamedTuple):
    """First-order change of a node's state and of its total derivative."""

    dS: np.ndarray
    dgrad: np.ndarray


def _parents_state(g, s, d):
    return [s[p] for p in g[d].parents]


def linearize(g, s, second_order=True):
    """Evaluate every Jacobian block and objective derivative at ``s``."""
    jac, og, oh = {}, {}, {}
    for v in g.order:
        n = g[v]
        if n.parents:
            jac[v] = n.func.jacobian(_parents_state(g, s, v))
        if n.objective is not None:
            z = np.concatenate([s[m] for m in g.members(v)])
            og[v] = np.asarray(n.objective.gradient_flat(z), dtype=float)
            if second_order:
                oh[v] = np.asarray(n.objective.hessian_flat(z), dtype=float)
    return Linearization(jac, og, oh)


def _scatter(g, owner, vec, out):
    start = 0
    for m in g.members(owner):
        d = g.dim(m)
        out[m] += vec[start:start + d]
        start += d


def partial_objective_gradient(g, s, lin=None):
    """Gradient of ``sum_v l_v`` treating every state as an independent variable."""
    lin = lin or linearize(g, s, second_order=False)
    fbar = {v: np.zeros(g.dim(v)) for v in g.order}
    for owner, grad in lin.obj_grads.items():
        _scatter(g, owner, grad, fbar)
    return fbar


def reverse_grad(g, s, lin=None):
    """Total derivative of the objective with respect to every node state.

    Parameters
    ----------
    g : CompGraph
    s : dict
        Feasible full assignment, as produced by :func:`forward_eval`.

    Returns
    -------
    dict
        ``df/dS_v`` for every node; on input nodes this is the gradient of
        the substituted objective.
    """
    lin = lin or linearize(g, s, second_order=False)
    lam = partial_objective_gradient(g, s, lin)
    for v in reversed(g.order):
        for d in g.children[v]:
            k = g[d].parents.index(v)
            lam[v] = lam[v] + lin.jacobians[d][k].T @ lam[d]
    return lam


def input_gradient(g, s, duals=None):
    """Flat gradient of the substituted objective over the input nodes."""
    duals = duals if duals is not None else reverse_grad(g, s)
    return stack_inputs(g, duals)


def curvatures(g, s, duals):
    """``duals[d]``-weighted Hessian of every node function over its parents."""
    return {d: np.asarray(g[d].func.weighted_hessian(_parents_state(g, s, d), duals[d]), dtype=float)
            for d in g.noninput_ids}


def hessian_vector(g, s, duals, delta, lin=None, curv=None):
    """Propagate an input perturbation through the first- and second-order recursions.

    Parameters
    ----------
    g : CompGraph
    s : dict
        Feasible full assignment.
    duals : dict
        ``reverse_grad(g, s)``.
    delta : dict
        Perturbation of each input node.

    Returns
    -------
    dict
        :class:`Tangent` per node; ``dgrad`` restricted to the inputs equals
        ``H @ delta`` for the Hessian ``H`` of the substituted objective.
    """
    lin = lin or linearize(g, s)
    curv = curv if curv is not None else curvatures(g, s, duals)
    dS = {}
    for v in g.order:
        n = g[v]
        if not n.parents:
            if v not in delta:
                raise DimensionError(v, "perturbation missing")
            x = np.asarray(delta[v], dtype=float).reshape(-1)
            if x.shape != (n.dim,):
                raise DimensionError(v, f"perturbation has length {x.size}, expected {n.dim}")
            dS[v] = x
        else:
            acc = np.zeros(n.dim)
            for J, p in zip(lin.jacobians[v], n.parents):
                acc += J @ dS[p]
            dS[v] = acc

    # second-order source terms: local objective Hessians and function curvature
    src = {v: np.zeros(g.dim(v)) for v in g.order}
    for owner, H in lin.obj_hessians.items():
        z = np.concatenate([dS[m] for m in g.members(owner)])
        _scatter(g, owner, H @ z, src)
    for d, W in curv.items():
        parents = g[d].parents
        z = np.concatenate([dS[p] for p in parents])
        y = W @ z
        start = 0
        for p in parents:
            k = g.dim(p)
            src[p] += y[start:start + k]
            start += k

    dgrad = src
    for v in reversed(g.order):
        for d in g.children[v]:
            k = g[d].parents.index(v)
            dgrad[v] = dgrad[v] + lin.jacobians[d][k].T @ dgrad[d]
    return {v: Tangent(dS[v], dgrad[v]) for v in g.order}


def accumulate_dense_hessian(g, s, return_asymmetry=False):
    """Dense Hessian of the substituted objective over the concatenated inputs.

    Built from one Hessian-vector product per input coordinate and then
    symmetrized as ``(H + H^T) / 2``.  A :class:`HessianAsymmetryWarning` is
    issued when ``||H - H^T|| / ||H||`` exceeds ``1e-10`` before
    symmetrization.
    """
    duals = reverse_grad(g, s)
    lin = linearize(g, s)
    curv = curvatures(g, s, duals)
    N = g.n_inputs_total
    H = np.empty((N, N))
    for j in range(N):
        e = np.zeros(N)
        e[j] = 1.0
        t = hessian_vector(g, s, duals, split_inputs(g, e), lin=lin, curv=curv)
        H[:, j] = stack_inputs(g, {v: t[v].dgrad for v in g.input_ids})
    norm = np.linalg.norm(H)
    asym = float(np.linalg.norm(H - H.T) / norm) if norm > 0 else 0.0
    if asym > SYMMETRY_TOL:
        warnings.warn(f"accumulated Hessian asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:g}",
                      HessianAsymmetryWarning, stacklevel=2)
    H = 0.5 * (H + H.T)
    if return_asymmetry:
        return H, asym
    return H
