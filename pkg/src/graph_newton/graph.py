"""Computational graph: nodes, validation, forward evaluation and the objective.

Conventions used throughout the package:

* states, duals and steps are ``dict`` objects mapping node id to a 1-D
  float array;
* a node's parents are ordered and that order fixes the column order of its
  Jacobian blocks;
* an objective with ``scope="family"`` on node ``v`` reads the states of
  ``(v, *parents(v))`` in that order.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np

from .exceptions import DimensionError, GraphError
from .functions import LocalObjective, NodeFunction

__all__ = [
    "NodeSpec",
    "CompGraph",
    "Violation",
    "validate_graph",
    "forward_eval",
    "objective_value",
    "constraint_residuals",
    "stack_inputs",
    "split_inputs",
]


class Violation(NamedTuple):
    """One broken structural invariant; ``subject`` names the offending node or edge."""

    kind: str
    subject: str
    detail: str

    def __str__(self):
        return f"{self.kind} at {self.subject}: {self.detail}"


@dataclass(frozen=True)
class NodeSpec:
    """A vertex of the computational graph.

    Parameters
    ----------
    id : str
        Unique node identifier.
    dim : int
        State dimension.
    parents : tuple of str
        Ordered parent ids; empty for input nodes.
    func : NodeFunction, optional
        Present exactly when ``parents`` is nonempty.
    objective : LocalObjective, optional
        Local objective owned by this node.
    """

    id: str
    dim: int
    parents: tuple = ()
    func: Optional[NodeFunction] = field(default=None, compare=False)
    objective: Optional[LocalObjective] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "parents", tuple(str(p) for p in self.parents))
        object.__setattr__(self, "dim", int(self.dim))


class CompGraph:
    """Immutable DAG of :class:`NodeSpec` with a cached topological order.

    Construction never raises on structural problems; they are reported by
    :func:`validate_graph` and enforced by the evaluation routines.
    """

    def __init__(self, nodes):
        self.nodes = tuple(nodes)
        self._by_id = {}
        for n in self.nodes:
            self._by_id.setdefault(n.id, n)
        self.children = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for p in dict.fromkeys(n.parents):
                if p in self.children and p != n.id:
                    self.children[p].append(n.id)
        self.order = self._toposort()

    def _toposort(self):
        index = {n.id: i for i, n in reversed(list(enumerate(self.nodes)))}
        indeg = {n.id: 0 for n in self.nodes}
        for n in self.nodes:
            for p in dict.fromkeys(n.parents):
                if p == n.id:
                    return None
                if p in indeg:
                    indeg[n.id] += 1
        heap = [index[v] for v, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            v = self.nodes[heapq.heappop(heap)].id
            order.append(v)
            for c in self.children[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(heap, index[c])
        if len(order) != len(indeg):
            return None
        return tuple(order)

    def __getitem__(self, node_id):
        return self._by_id[node_id]

    def __contains__(self, node_id):
        return node_id in self._by_id

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    @cached_property
    def input_ids(self):
        """Parentless nodes, in topological order."""
        return tuple(v for v in (self.order or [n.id for n in self.nodes]) if not self[v].parents)

    @cached_property
    def noninput_ids(self):
        return tuple(v for v in (self.order or [n.id for n in self.nodes]) if self[v].parents)

    def dim(self, node_id):
        return self._by_id[node_id].dim

    def members(self, node_id):
        """Nodes read by the objective owned by ``node_id``."""
        n = self._by_id[node_id]
        if n.objective is not None and n.objective.scope == "family":
            return (n.id,) + n.parents
        return (n.id,)

    @cached_property
    def violations(self):
        return tuple(validate_graph(self))

    def check(self):
        """Raise :class:`GraphError` unless all invariants hold."""
        if self.violations:
            raise GraphError(self.violations)
        return self

    @cached_property
    def n_inputs_total(self):
        return sum(self.dim(v) for v in self.input_ids)

    def __repr__(self):
        return f"CompGraph({len(self.nodes)} nodes, {len(self.input_ids)} inputs)"


def validate_graph(g):
    """List every violated structural invariant of ``g``.

    Returns
    -------
    list of Violation
        Empty iff the graph is a well-formed computational graph.
    """
    out = []
    seen = set()
    for n in g.nodes:
        if n.id in seen:
            out.append(Violation("duplicate-id", n.id, "node id used more than once"))
        seen.add(n.id)
    for n in g.nodes:
        if n.dim < 1:
            out.append(Violation("bad-dim", n.id, f"dim must be >= 1, got {n.dim}"))
        if len(set(n.parents)) != len(n.parents):
            out.append(Violation("duplicate-parent", n.id, f"parents {list(n.parents)}"))
        if n.id in n.parents:
            out.append(Violation("self-loop", n.id, "node lists itself as a parent"))
        unknown = [p for p in n.parents if p not in g]
        for p in unknown:
            out.append(Violation("unknown-parent", n.id, f"parent {p!r} is not a node"))
        if n.parents and n.func is None:
            out.append(Violation("missing-function", n.id, "non-input node has no node function"))
        if not n.parents and n.func is not None:
            out.append(Violation("unexpected-function", n.id, "input node carries a node function"))
        if n.func is not None and n.parents and not unknown:
            pdims = tuple(g.dim(p) for p in n.parents)
            if n.func.in_dims != pdims:
                out.append(Violation("function-input-dim", n.id,
                                     f"function expects parent dims {n.func.in_dims}, parents have {pdims}"))
            if n.func.out_dim != n.dim:
                out.append(Violation("function-output-dim", n.id,
                                     f"function outputs {n.func.out_dim}, node dim is {n.dim}"))
        if n.objective is not None and not unknown:
            mdims = (n.dim,) + (tuple(g.dim(p) for p in n.parents)
                                if n.objective.scope == "family" else ())
            if n.objective.in_dims != mdims:
                out.append(Violation("objective-dim", n.id,
                                     f"objective expects member dims {n.objective.in_dims}, members have {mdims}"))
    if g.order is None:
        out.append(Violation("cycle", ",".join(_cycle_nodes(g)), "graph is not acyclic"))
    return out


def _cycle_nodes(g):
    # nodes left over after repeatedly stripping sources lie on or behind a cycle
    indeg = {n.id: sum(1 for p in set(n.parents) if p in g) for n in g.nodes}
    stack = [v for v, d in indeg.items() if d == 0]
    while stack:
        v = stack.pop()
        for c in g.children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                stack.append(c)
    return sorted(v for v, d in indeg.items() if d > 0)


def _vec(node, value, dim):
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (dim,):
        raise DimensionError(node, f"expected a state of length {dim}, got shape {np.shape(value)}")
    return arr


def forward_eval(g, inputs):
    """Compute every non-input state from the input states, in topological order.

    Parameters
    ----------
    g : CompGraph
    inputs : dict
        States of exactly the input nodes.

    Returns
    -------
    dict
        Full state assignment, keyed in topological order.
    """
    g.check()
    extra = set(inputs) - set(g.input_ids)
    if extra:
        bad = sorted(extra)[0]
        raise DimensionError(bad, "is not an input node")
    s = {}
    for v in g.order:
        n = g[v]
        if not n.parents:
            if v not in inputs:
                raise DimensionError(v, "input state missing")
            s[v] = _vec(v, inputs[v], n.dim).copy()
        else:
            out = np.asarray(n.func.value([s[p] for p in n.parents]), dtype=float)
            if out.shape != (n.dim,):
                raise DimensionError(v, f"node function returned shape {out.shape}, expected ({n.dim},)")
            s[v] = out
    return s


def _members_state(g, s, v):
    return [s[m] for m in g.members(v)]


def objective_value(g, s):
    """Sum of all local objectives at the full assignment ``s``."""
    total = 0.0
    for v in g.order:
        obj = g[v].objective
        if obj is not None:
            total += obj.value(_members_state(g, s, v))
    return float(total)


def constraint_residuals(g, s):
    """``Phi_v(parents) - S_v`` for every non-input node."""
    return {v: g[v].func.value([s[p] for p in g[v].parents]) - s[v] for v in g.noninput_ids}


def stack_inputs(g, assignment, ids=None):
    """Concatenate the vectors of ``ids`` (default: input nodes) into one array."""
    ids = g.input_ids if ids is None else ids
    if not ids:
        return np.zeros(0)
    return np.concatenate([np.asarray(assignment[v], dtype=float).reshape(-1) for v in ids])


def split_inputs(g, vec, ids=None):
    """Inverse of :func:`stack_inputs`."""
    ids = g.input_ids if ids is None else ids
    vec = np.asarray(vec, dtype=float)
    out, start = {}, 0
    for v in ids:
        d = g.dim(v)
        out[v] = vec[start:start + d].copy()
        start += d
    if start != vec.size:
        raise ValueError(f"vector of length {vec.size} does not match total dim {start}")
    return out
