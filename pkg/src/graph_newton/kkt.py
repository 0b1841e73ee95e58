"""Structured KKT system of the lifted equality-constrained program.

Lifting turns every assignment ``S_d <- Phi_d(S_pa(d))`` into the constraint
``h_d = Phi_d(S_pa(d)) - S_d = 0``.  Linearizing the Lagrangian's
stationarity conditions at a feasible point with multipliers fixed to the
reverse-mode duals gives the system

    [ Q  G^T ] [ dS      ]   [ -df̄ ]
    [ G   0  ] [ lambda+ ] = [ -h   ]

where ``Q`` is the Lagrangian Hessian and ``df̄`` holds the *partial*
derivatives of the local objectives (each state treated as independent).
Using total derivatives here instead would double count the chain rule.

Worked scalar case: ``y = 2x``, ``l(y) = y^2/2`` at ``x = 3`` gives
``y = 6`` and ``lambda_y = 6``.  Over ``(x, y, lambda)`` the matrix is
``[[0, 0, 2], [0, 1, -1], [2, -1, 0]]`` with right-hand side
``(0, -6, 0)``, whose solution ``dx = -3`` is the Newton step on
``f(x) = 2x^2``.

The system is stored as one quadratic term per graph family and one
constraint row per non-input node, in exactly the hyperedge-structured
form the tree solver consumes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

from .autodiff import curvatures, linearize, reverse_grad
from .exceptions import InfeasiblePointError, SingularKKTError

__all__ = [
    "FamilyTerm",
    "ConstraintRow",
    "KktSystem",
    "assemble_kkt",
    "dense_kkt_solve",
    "dense_solve_matrix",
    "extract_input_step",
    "write_matrix_market",
    "FEASIBILITY_TOL",
]

FEASIBILITY_TOL = 1e-10


@dataclass(frozen=True)
class FamilyTerm:
    """Quadratic contribution ``0.5 x^T H x - rhs^T x`` over ``members``."""

    owner: str
    members: tuple
    hessian: np.ndarray
    rhs: np.ndarray


@dataclass(frozen=True)
class ConstraintRow:
    """Linearized constraint ``jacobian @ x_support = rhs`` owned by node ``node``.

    ``support`` is ``(node, *parents(node))`` so the first column block is ``-I``.
    """

    node: str
    support: tuple
    jacobian: np.ndarray
    rhs: np.ndarray


@dataclass(frozen=True)
class KktSystem:
    """Block-sparse symmetric indefinite KKT system.

    Attributes
    ----------
    primal_ids : tuple of str
        Primal block layout (all nodes, topological order).
    row_ids : tuple of str
        Multiplier block layout (non-input nodes, topological order).
    dims : dict
        State dimension per node.
    terms : tuple of FamilyTerm
    rows : tuple of ConstraintRow
    input_ids : tuple of str
    """

    primal_ids: tuple
    row_ids: tuple
    dims: dict
    terms: tuple
    rows: tuple
    input_ids: tuple = ()
    meta: dict = field(default_factory=dict, compare=False)

    @cached_property
    def primal_offsets(self):
        out, k = {}, 0
        for v in self.primal_ids:
            out[v] = k
            k += self.dims[v]
        return out

    @cached_property
    def row_offsets(self):
        out, k = {}, self.n_primal
        for d in self.row_ids:
            out[d] = k
            k += self.dims[d]
        return out

    @cached_property
    def n_primal(self):
        return sum(self.dims[v] for v in self.primal_ids)

    @cached_property
    def n_dual(self):
        return sum(self.dims[d] for d in self.row_ids)

    @property
    def size(self):
        return self.n_primal + self.n_dual

    def _index(self, ids):
        off = self.primal_offsets
        return np.concatenate([np.arange(off[v], off[v] + self.dims[v]) for v in ids])

    def _coo(self):
        rows, cols, vals = [], [], []
        for t in self.terms:
            idx = self._index(t.members)
            r, c = np.meshgrid(idx, idx, indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(np.asarray(t.hessian).ravel())
        for row in self.rows:
            cidx = self._index(row.support)
            o = self.row_offsets[row.node]
            ridx = np.arange(o, o + self.dims[row.node])
            r, c = np.meshgrid(ridx, cidx, indexing="ij")
            J = np.asarray(row.jacobian)
            rows += [r.ravel(), c.ravel()]
            cols += [c.ravel(), r.ravel()]
            vals += [J.ravel(), J.ravel()]
        if not rows:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    def rhs(self):
        b = np.zeros(self.size)
        for t in self.terms:
            b[self._index(t.members)] += t.rhs
        for row in self.rows:
            o = self.row_offsets[row.node]
            b[o:o + self.dims[row.node]] += row.rhs
        return b

    def to_sparse(self):
        """``(K, rhs)`` with ``K`` as a CSR matrix (duplicate entries summed)."""
        r, c, v = self._coo()
        K = sp.coo_matrix((v, (r, c)), shape=(self.size, self.size)).tocsr()
        K.sum_duplicates()
        return K, self.rhs()

    def to_dense(self):
        K, b = self.to_sparse()
        return K.toarray(), b

    def q_blocks(self):
        """Summed Lagrangian Hessian blocks keyed by ordered node pairs."""
        out = {}
        for t in self.terms:
            offs = np.concatenate([[0], np.cumsum([self.dims[m] for m in t.members])])
            for i, a in enumerate(t.members):
                for j, b in enumerate(t.members):
                    blk = t.hessian[offs[i]:offs[i + 1], offs[j]:offs[j + 1]]
                    if (a, b) in out:
                        out[(a, b)] = out[(a, b)] + blk
                    else:
                        out[(a, b)] = np.array(blk)
        return out

    def regularized(self, mu, ids=None):
        """Copy with ``mu * I`` added to the primal diagonal blocks of ``ids`` (default: inputs)."""
        ids = self.input_ids if ids is None else ids
        extra = tuple(FamilyTerm(f"reg:{v}", (v,), mu * np.eye(self.dims[v]), np.zeros(self.dims[v]))
                      for v in ids)
        return replace(self, terms=self.terms + extra, meta=dict(self.meta, mu=mu))

    def unpack(self, sol):
        """Split a flat solution into ``(dS, lambda+)`` dictionaries."""
        dS = {v: sol[o:o + self.dims[v]].copy() for v, o in self.primal_offsets.items()}
        lam = {d: sol[o:o + self.dims[d]].copy() for d, o in self.row_offsets.items()}
        return dS, lam

    def pack(self, dS, lam):
        out = np.zeros(self.size)
        for v, o in self.primal_offsets.items():
            out[o:o + self.dims[v]] = dS[v]
        for d, o in self.row_offsets.items():
            out[o:o + self.dims[d]] = lam[d]
        return out

    def residual(self, dS, lam):
        """``||K sol - rhs||_inf``."""
        K, b = self.to_sparse()
        return float(np.max(np.abs(K @ self.pack(dS, lam) - b), initial=0.0))


def assemble_kkt(g, s, duals=None, feasibility_tol=FEASIBILITY_TOL):
    """Assemble the KKT system at a feasible point with multipliers ``duals``.

    Parameters
    ----------
    g : CompGraph
    s : dict
        Full state assignment; must satisfy every constraint.
    duals : dict, optional
        Multipliers; defaults to ``reverse_grad(g, s)``.

    Raises
    ------
    InfeasiblePointError
        If ``||h||_inf > feasibility_tol * (1 + ||S||_inf)``.
    """
    lin = linearize(g, s)
    if duals is None:
        duals = reverse_grad(g, s, lin)
    scale = 1.0 + max((float(np.max(np.abs(x), initial=0.0)) for x in s.values()), default=0.0)
    rows = []
    worst = 0.0
    for d in g.noninput_ids:
        n = g[d]
        h = n.func.value([s[p] for p in n.parents]) - s[d]
        worst = max(worst, float(np.max(np.abs(h), initial=0.0)))
        J = np.hstack([-np.eye(n.dim)] + list(lin.jacobians[d]))
        rows.append(ConstraintRow(d, (d,) + n.parents, J, -h))
    if worst > feasibility_tol * scale:
        raise InfeasiblePointError(f"constraint residual {worst:.3e} exceeds {feasibility_tol:g} x (1 + ||S||)")

    curv = curvatures(g, s, duals)
    terms = []
    for v in g.order:
        n = g[v]
        members = (v,) + n.parents if n.parents else (v,)
        dims = [g.dim(m) for m in members]
        m = sum(dims)
        H = np.zeros((m, m))
        b = np.zeros(m)
        if n.objective is not None:
            k = sum(g.dim(x) for x in g.members(v))
            H[:k, :k] += lin.obj_hessians[v]
            b[:k] -= lin.obj_grads[v]
        if n.parents:
            H[n.dim:, n.dim:] += curv[v]
        if n.objective is None and not n.parents:
            continue
        terms.append(FamilyTerm(v, members, H, b))
    return KktSystem(
        primal_ids=tuple(g.order),
        row_ids=tuple(g.noninput_ids),
        dims={v: g.dim(v) for v in g.order},
        terms=tuple(terms),
        rows=tuple(rows),
        input_ids=tuple(g.input_ids),
    )


def dense_kkt_solve(k, return_inertia=False):
    """Solve the KKT system densely with a partially pivoted LU factorization.

    Returns
    -------
    dS, lam : dict
        Primal step for every node and the new multipliers.
    inertia : tuple of int, optional
        ``(n_pos, n_neg, n_zero)`` eigenvalue counts of the KKT matrix.

    Raises
    ------
    SingularKKTError
        If a pivot is negligible relative to the largest matrix entry.
    """
    K, b = k.to_dense()
    out = dense_solve_matrix(K, b, return_inertia)
    if return_inertia:
        return (*k.unpack(out[0]), out[1])
    return k.unpack(out)


def dense_solve_matrix(K, b, return_inertia=False):
    """``K^{-1} b`` by LU with partial pivoting, plus the inertia of ``K`` if requested.

    Raises :class:`SingularKKTError` on a negligible pivot.
    """
    if K.size == 0:
        return (np.zeros(0), (0, 0, 0)) if return_inertia else np.zeros(0)
    with warnings.catch_warnings():
        # singularity is reported below as SingularKKTError
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(K, check_finite=True)
    diag = np.abs(np.diag(lu))
    tol = 1e-14 * max(1.0, float(np.max(np.abs(K)))) * K.shape[0]
    bad = np.flatnonzero(diag <= tol)
    if bad.size:
        raise SingularKKTError(int(bad[0]))
    sol = scipy.linalg.lu_solve((lu, piv), b)
    if return_inertia:
        return sol, _inertia(np.linalg.eigvalsh(K))
    return sol


def _inertia(eigs, rtol=1e-12):
    scale = max(1.0, float(np.max(np.abs(eigs), initial=0.0)))
    tol = rtol * scale
    return int(np.sum(eigs > tol)), int(np.sum(eigs < -tol)), int(np.sum(np.abs(eigs) <= tol))


def extract_input_step(sol, inputs):
    """Restrict a KKT solution ``(dS, lambda+)`` to the input nodes.

    ``inputs`` is either the :class:`KktSystem` or a sequence of input ids.
    """
    input_ids = inputs.input_ids if isinstance(inputs, KktSystem) else inputs
    dS = sol[0] if isinstance(sol, tuple) else sol
    return {v: np.array(dS[v]) for v in input_ids}


def write_matrix_market(k, target):
    """Write the KKT matrix in Matrix-Market symmetric coordinate format (1-based)."""
    K, _ = k.to_sparse()
    scipy.io.mmwrite(target, sp.tril(K).tocoo(), symmetry="symmetric")
