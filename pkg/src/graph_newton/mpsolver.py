"""Two-pass message passing for the KKT system over a tree decomposition.

Every family term and constraint row lives in one bag that covers its
support.  The upward pass visits bags in post-order.  At bag ``l`` with
parent ``p`` it eliminates the primal blocks of ``E = bag(l) - bag(p)``
together with every multiplier row its ``E`` columns can pivot.  It then
sends the Schur complement over the separator ``S = bag(l) & bag(p)`` to
the parent, along with the rows that could not be pivoted there.  The
downward pass recovers the eliminated unknowns from the stored factors.

Rows are split with an orthogonal transform ``T`` taken from the SVD of
their ``E`` columns.  The first ``r`` transformed rows have full row rank
on ``E`` and are pivoted with ``x_E``.  The rest have exactly zero ``E``
columns and travel upward verbatim.  The pivot block is factored with a
Bunch-Kaufman ``LDL^T``, so its inertia comes for free and sums to the
inertia of the whole KKT matrix.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import SingularPivotError
from .treedecomp import Hypergraph, decompose

__all__ = [
    "CliqueLocal",
    "Message",
    "BagRecord",
    "FactoredTree",
    "kkt_hypergraph",
    "distribute_blocks",
    "factorize_clique",
    "gather",
    "backsolve",
    "solve_kkt_tree",
    "PIVOT_RTOL",
]

PIVOT_RTOL = 1e-12


@dataclass
class CliqueLocal:
    """Accumulated data of one bag over its vertices ``eliminate + separator``.

    ``origin`` lists, for each local row block, either ``("row", d)`` for an
    original constraint row or ``("child", c)`` for rows forwarded by child
    bag ``c``.
    """

    bag: int
    eliminate: tuple
    separator: tuple
    dims: dict
    Q: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray
    origin: list = field(default_factory=list)

    @property
    def vertices(self):
        return self.eliminate + self.separator

    @property
    def n_elim(self):
        return sum(self.dims[v] for v in self.eliminate)


@dataclass
class BagRecord:
    """Diagnostics of one bag's elimination."""

    bag: int
    eliminate: tuple
    separator: tuple
    n_elim: int
    n_sep: int
    n_rows: int
    rank: int
    inertia: tuple
    ms: float


@dataclass
class Message:
    """Schur data a bag sends to its parent, plus the factors for back-substitution."""

    separator: tuple
    Q: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray
    record: BagRecord
    factors: dict = field(default_factory=dict, repr=False)


@dataclass
class FactoredTree:
    k: object
    td: object
    parent: dict
    postorder: list
    locals: dict
    messages: dict
    root_factors: dict

    @property
    def records(self):
        out = {b: m.record for b, m in self.messages.items()}
        out[self.root_factors["record"].bag] = self.root_factors["record"]
        return out

    @property
    def inertia(self):
        tot = np.zeros(3, dtype=int)
        for r in self.records.values():
            tot += r.inertia
        return tuple(int(x) for x in tot)


def kkt_hypergraph(k):
    """Support hypergraph of a KKT system: one edge per family term and constraint row."""
    edges = [t.members for t in k.terms] + [r.support for r in k.rows]
    return Hypergraph(k.primal_ids, edges)


def _block_index(vertices, dims):
    out, o = {}, 0
    for v in vertices:
        out[v] = np.arange(o, o + dims[v])
        o += dims[v]
    return out, o


def _covering_bag(support, td, by_vertex):
    support = set(support)
    first = next(iter(support))
    for i in by_vertex.get(first, ()):
        if support <= td.bags[i]:
            return i
    raise ValueError(f"no bag covers the block over {sorted(support)}")


def distribute_blocks(k, td):
    """Assign every family term and constraint row to the lowest-id covering bag.

    Returns
    -------
    terms, rows : dict
        Bag id to the list of :class:`FamilyTerm` / :class:`ConstraintRow`
        placed there.
    """
    by_vertex = {}
    for i in sorted(td.bags):
        for v in td.bags[i]:
            by_vertex.setdefault(v, []).append(i)
    terms = {i: [] for i in td.bags}
    rows = {i: [] for i in td.bags}
    for t in k.terms:
        terms[_covering_bag(t.members, td, by_vertex)].append(t)
    for r in k.rows:
        rows[_covering_bag(r.support, td, by_vertex)].append(r)
    return terms, rows


def _ldl(P, bag, rtol):
    n = P.shape[0]
    if n == 0:
        return None, (0, 0, 0)
    lu, d, perm = scipy.linalg.ldl(P, lower=True, hermitian=True)
    eigs = np.linalg.eigvalsh(d)
    tol = rtol * max(float(np.max(np.abs(P))), np.finfo(float).tiny)
    if np.any(np.abs(eigs) <= tol):
        raise SingularPivotError(bag)
    inertia = (int(np.sum(eigs > 0)), int(np.sum(eigs < 0)), 0)
    return (lu[perm], d, perm), inertia


def _ldl_solve(fac, rhs):
    L, d, perm = fac
    y = scipy.linalg.solve_triangular(L, rhs[perm], lower=True, unit_diagonal=True)
    w = scipy.linalg.solve(d, y, assume_a="sym")
    z = scipy.linalg.solve_triangular(L.T, w, lower=False, unit_diagonal=True)
    out = np.empty_like(z)
    out[perm] = z
    return out


def factorize_clique(n_elim, Q, b, G, h, bag=None, rtol=PIVOT_RTOL):
    """Eliminate the first ``n_elim`` primal coordinates and all rows they can pivot.

    Parameters
    ----------
    n_elim : int
        Number of leading coordinates that belong to the eliminate-set.
    Q, b : ndarray
        Local quadratic block and linear term over ``E`` then ``S``.
    G, h : ndarray
        Local constraint rows ``G x = h``.

    Returns
    -------
    Q_S, b_S, G_S, h_S : ndarray
        Schur complement over the separator and the forwarded rows.
    factors : dict
        What :func:`_recover` needs for back-substitution.
    inertia : tuple of int
        Inertia of the pivot block.
    """
    Q = np.asarray(Q, dtype=float)
    b = np.asarray(b, dtype=float)
    G = np.asarray(G, dtype=float).reshape(-1, Q.shape[0])
    h = np.asarray(h, dtype=float).reshape(-1)
    ne = int(n_elim)
    m = G.shape[0]
    GE = G[:, :ne]
    if m and ne:
        U, sv, _ = np.linalg.svd(GE)
        scale = float(np.max(np.abs(GE)))
        r = int(np.sum(sv > rtol * scale)) if scale > 0 else 0
    else:
        U, r = np.eye(m), 0
    Gt = U.T @ G
    ht = U.T @ h
    Gt[r:, :ne] = 0.0
    G1E, G1S = Gt[:r, :ne], Gt[:r, ne:]
    P = np.block([[Q[:ne, :ne], G1E.T], [G1E, np.zeros((r, r))]])
    C = np.hstack([Q[ne:, :ne], G1S.T])
    rhs_p = np.concatenate([b[:ne], ht[:r]])
    fac, inertia = _ldl(P, bag, rtol)
    if fac is None:
        PinvCt = np.zeros((0, Q.shape[0] - ne))
        Pinv_rhs = np.zeros(0)
    else:
        PinvCt = _ldl_solve(fac, np.ascontiguousarray(C.T))
        Pinv_rhs = _ldl_solve(fac, rhs_p)
    QS = Q[ne:, ne:] - C @ PinvCt
    QS = 0.5 * (QS + QS.T)
    bS = b[ne:] - C @ Pinv_rhs
    factors = {"U": U, "rank": r, "n_elim": ne, "PinvCt": PinvCt, "Pinv_rhs": Pinv_rhs}
    return QS, bS, Gt[r:, ne:], ht[r:], factors, inertia


def _recover(factors, xS, mu2):
    """Eliminated primal block and local row multipliers from separator data."""
    ne, r = factors["n_elim"], factors["rank"]
    z = factors["Pinv_rhs"] - factors["PinvCt"] @ xS
    lam_local = factors["U"] @ np.concatenate([z[ne:], mu2])
    return z[:ne], lam_local


def _build_local(k, bag, elim, sep, terms, rows, child_msgs):
    dims = k.dims
    idx, n = _block_index(elim + sep, dims)
    Q = np.zeros((n, n))
    b = np.zeros(n)
    for t in terms:
        cols = np.concatenate([idx[m] for m in t.members])
        Q[np.ix_(cols, cols)] += t.hessian
        b[cols] += t.rhs
    blocks, hs, origin = [], [], []
    for row in rows:
        Gr = np.zeros((dims[row.node], n))
        Gr[:, np.concatenate([idx[v] for v in row.support])] = row.jacobian
        blocks.append(Gr)
        hs.append(row.rhs)
        origin.append(("row", row.node, dims[row.node]))
    for c, msg in child_msgs:
        cols = np.concatenate([idx[v] for v in msg.separator]) if msg.separator else np.zeros(0, int)
        Q[np.ix_(cols, cols)] += msg.Q
        b[cols] += msg.b
        if msg.G.shape[0]:
            Gr = np.zeros((msg.G.shape[0], n))
            Gr[:, cols] = msg.G
            blocks.append(Gr)
            hs.append(msg.h)
        origin.append(("child", c, msg.G.shape[0]))
    G = np.vstack(blocks) if blocks else np.zeros((0, n))
    h = np.concatenate(hs) if hs else np.zeros(0)
    return CliqueLocal(bag, elim, sep, dims, Q, b, G, h, origin)


def gather(k, td, root=None, reverse_children=False, rtol=PIVOT_RTOL):
    """Upward pass: factor every bag in post-order and absorb messages at the root.

    Raises
    ------
    SingularPivotError
        If a bag's pivot block is singular, or rows remain unpivoted at the root.
    """
    parent, post = td.rooted(root)
    if reverse_children:
        post = _reverse_child_postorder(td, parent, post)
    root = post[-1]
    order_key = {v: i for i, v in enumerate(k.primal_ids)}
    terms, rows = distribute_blocks(k, td)
    children = {i: [] for i in td.bags}
    for c, p in parent.items():
        if p is not None:
            children[p].append(c)
    messages, locals_ = {}, {}
    root_factors = None
    for l in post:
        t0 = time.perf_counter()
        p = parent[l]
        bag = td.bags[l]
        sep_set = bag & td.bags[p] if p is not None else frozenset()
        elim = tuple(sorted(bag - sep_set, key=order_key.__getitem__))
        sep = tuple(sorted(sep_set, key=order_key.__getitem__))
        kids = [(c, messages[c]) for c in sorted(children[l], reverse=reverse_children)]
        loc = _build_local(k, l, elim, sep, terms[l], rows[l], kids)
        QS, bS, GS, hS, fac, inertia = factorize_clique(loc.n_elim, loc.Q, loc.b, loc.G, loc.h,
                                                        bag=l, rtol=rtol)
        if p is None and GS.shape[0]:
            raise SingularPivotError(l, f"{GS.shape[0]} constraint rows left unpivoted at root bag {l}")
        rec = BagRecord(l, elim, sep, loc.n_elim, QS.shape[0], loc.G.shape[0], fac["rank"],
                        inertia, 1e3 * (time.perf_counter() - t0))
        locals_[l] = loc
        if p is None:
            root_factors = dict(fac, record=rec)
        else:
            messages[l] = Message(sep, QS, bS, GS, hS, rec, fac)
    return FactoredTree(k, td, parent, post, locals_, messages, root_factors)


def _reverse_child_postorder(td, parent, post):
    root = post[-1]
    children = {i: [] for i in td.bags}
    for c, p in parent.items():
        if p is not None:
            children[p].append(c)
    out = []
    stack = [(root, False)]
    while stack:
        x, done = stack.pop()
        if done:
            out.append(x)
            continue
        stack.append((x, True))
        for c in sorted(children[x]):
            stack.append((c, False))
    return out


def backsolve(ft):
    """Downward pass: recover ``(dS, lambda+)`` from a factored tree."""
    k = ft.k
    x = {}
    lam = {}
    mu_in = {}
    for l in reversed(ft.postorder):
        loc = ft.locals[l]
        fac = ft.root_factors if ft.parent[l] is None else ft.messages[l].factors
        xS = np.concatenate([x[v] for v in loc.separator]) if loc.separator else np.zeros(0)
        mu2 = mu_in.pop(l, np.zeros(0))
        xE, lam_local = _recover(fac, xS, mu2)
        o = 0
        for v in loc.eliminate:
            x[v] = xE[o:o + k.dims[v]]
            o += k.dims[v]
        o = 0
        for kind, key, size in loc.origin:
            chunk = lam_local[o:o + size]
            o += size
            if kind == "row":
                lam[key] = chunk
            else:
                mu_in[key] = chunk
    dS = {v: x[v] for v in k.primal_ids}
    return dS, {d: lam[d] for d in k.row_ids}


def solve_kkt_tree(k, td=None, root=None, heuristic="min-fill", return_inertia=False,
                   reverse_children=False, return_factored=False):
    """Solve the KKT system by message passing over a tree decomposition.

    Parameters
    ----------
    k : KktSystem
    td : TreeDecomposition, optional
        Must cover the support of ``k``; built with ``heuristic`` if omitted.
    root : int, optional
        Bag to absorb last; defaults to ``td.root``.

    Returns
    -------
    dS, lam : dict
    inertia : tuple of int, optional
    """
    if td is None:
        td = decompose(kkt_hypergraph(k), heuristic)
    if not td.bags:
        out = ({}, {})
    else:
        ft = gather(k, td, root=root, reverse_children=reverse_children)
        out = backsolve(ft)
    if return_factored:
        return (*out, ft if td.bags else None)
    if return_inertia:
        return (*out, ft.inertia if td.bags else (0, 0, 0))
    return out
