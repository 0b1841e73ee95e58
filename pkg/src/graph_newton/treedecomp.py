"""Moralization, elimination orderings and tree decompositions.

Vertices are whole graph nodes (supernodes); a vector-valued state is one
vertex regardless of its dimension.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import cached_property

from .graph import Violation

__all__ = [
    "Hypergraph",
    "TreeDecomposition",
    "moralize",
    "elimination_order",
    "decomposition_from_ordering",
    "decompose",
    "validate_decomposition",
    "check_edge_separation",
    "HEURISTICS",
]

HEURISTICS = ("min-fill", "min-degree")


@dataclass(frozen=True)
class Hypergraph:
    vertices: tuple
    edges: tuple

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "edges", tuple(frozenset(e) for e in self.edges))
        vs = set(self.vertices)
        for e in self.edges:
            if not e or not e <= vs:
                raise ValueError(f"hyperedge {sorted(e)} is empty or has unknown vertices")

    def primal_graph(self):
        """Adjacency of the 2-section: vertices sharing a hyperedge are adjacent."""
        adj = {v: set() for v in self.vertices}
        for e in self.edges:
            for a in e:
                adj[a].update(e)
        for v in adj:
            adj[v].discard(v)
        return adj


@dataclass(frozen=True)
class TreeDecomposition:
    """Tree over integer bag ids with vertex sets ``bags[i]``.

    ``root`` is the bag the tree solver absorbs last; by default the bag of
    the last vertex in the elimination ordering.
    """

    bags: dict
    edges: tuple
    root: int = None

    @property
    def width(self):
        return max((len(b) for b in self.bags.values()), default=0) - 1

    @cached_property
    def neighbors(self):
        nb = {i: [] for i in self.bags}
        for a, b in self.edges:
            nb[a].append(b)
            nb[b].append(a)
        for i in nb:
            nb[i].sort()
        return nb

    def rooted(self, root=None):
        """``(parent, postorder)`` for the tree hung from ``root``."""
        root = self.root if root is None else root
        if root is None:
            root = min(self.bags)
        parent = {root: None}
        order = [root]
        stack = [root]
        while stack:
            x = stack.pop()
            for y in self.neighbors[x]:
                if y not in parent:
                    parent[y] = x
                    order.append(y)
                    stack.append(y)
        return parent, order[::-1]

    def to_json(self):
        return {
            "bags": [{"id": i, "vertices": sorted(self.bags[i])} for i in sorted(self.bags)],
            "edges": [[a, b] for a, b in self.edges],
            "width": self.width,
        }


def moralize(g):
    """Hypergraph with one edge ``{v} | pa(v)`` per non-input node.

    Input nodes that own an objective also contribute a singleton edge.
    """
    edges = []
    for v in g.order:
        n = g[v]
        if n.parents:
            edges.append(frozenset((v,) + n.parents))
        elif n.objective is not None:
            edges.append(frozenset((v,)))
    return Hypergraph(tuple(g.order), tuple(edges))


def _fill(adj, v):
    nb = list(adj[v])
    missing = 0
    for i, a in enumerate(nb):
        na = adj[a]
        for b in nb[i + 1:]:
            if b not in na:
                missing += 1
    return missing


def elimination_order(h, heuristic="min-fill"):
    """Greedy elimination ordering on the primal graph.

    Ties break toward the lexicographically smallest vertex id.
    """
    if heuristic not in HEURISTICS:
        raise ValueError(f"heuristic must be one of {HEURISTICS}, got {heuristic!r}")
    adj = h.primal_graph()
    score = _fill if heuristic == "min-fill" else (lambda a, v: len(a[v]))
    current = {v: score(adj, v) for v in adj}
    heap = [(s, v) for v, s in current.items()]
    heapq.heapify(heap)
    order = []
    while heap:
        s, v = heapq.heappop(heap)
        if v not in current or current[v] != s:
            continue
        order.append(v)
        del current[v]
        nb = adj.pop(v)
        for a in nb:
            adj[a].discard(v)
            adj[a].update(nb - {a})
        touched = set(nb)
        if heuristic == "min-fill":
            for a in nb:
                touched |= adj[a]
        for a in touched:
            new = score(adj, a)
            if new != current[a]:
                current[a] = new
                heapq.heappush(heap, (new, a))
    return order


def decomposition_from_ordering(h, order):
    """Tree decomposition produced by eliminating vertices in ``order``.

    Each vertex gets the bag ``{v} | (later neighbours after fill-in)``; a
    bag hangs from the bag of its earliest-eliminated later neighbour.
    Bags contained in an adjacent bag are then merged away.
    """
    order = list(order)
    if sorted(order) != sorted(h.vertices) or len(set(order)) != len(order):
        raise ValueError("ordering must be a permutation of the hypergraph's vertices")
    pos = {v: i for i, v in enumerate(order)}
    adj = h.primal_graph()
    bag_of, parent = {}, {}
    for v in order:
        nb = adj.pop(v)
        for a in nb:
            adj[a].discard(v)
            adj[a].update(nb - {a})
        bag_of[v] = frozenset(nb | {v})
        parent[v] = min(nb, key=pos.__getitem__) if nb else None

    # components of a disconnected graph hang from the final root
    roots = [v for v in order if parent[v] is None]
    top = roots[-1] if roots else None
    for r in roots[:-1]:
        parent[r] = top

    # contract tree edges whose one end is a subset of the other
    bags = dict(bag_of)
    nbrs = {v: set() for v in bags}
    for v, p in parent.items():
        if p is not None:
            nbrs[v].add(p)
            nbrs[p].add(v)
    root = top
    changed = True
    while changed:
        changed = False
        for x in sorted(bags, key=pos.__getitem__):
            if x not in bags:
                continue
            for y in sorted(nbrs[x], key=pos.__getitem__):
                if bags[x] <= bags[y]:
                    for z in nbrs.pop(x):
                        nbrs[z].discard(x)
                        if z != y:
                            nbrs[z].add(y)
                            nbrs[y].add(z)
                    del bags[x]
                    if root == x:
                        root = y
                    changed = True
                    break

    keys = sorted(bags, key=pos.__getitem__)
    ids = {v: i for i, v in enumerate(keys)}
    edges = sorted({tuple(sorted((ids[a], ids[b]))) for a in keys for b in nbrs[a]})
    return TreeDecomposition({ids[v]: bags[v] for v in keys}, tuple(edges),
                             ids[root] if root is not None else None)


def decompose(h, heuristic="min-fill"):
    """Heuristic tree decomposition of a hypergraph (or of a graph's moralization)."""
    if not isinstance(h, Hypergraph):
        h = moralize(h)
    return decomposition_from_ordering(h, elimination_order(h, heuristic))


def _components(nodes, nbrs):
    seen, comps = set(), []
    for s in nodes:
        if s in seen:
            continue
        comp, stack = set(), [s]
        seen.add(s)
        while stack:
            x = stack.pop()
            comp.add(x)
            for y in nbrs.get(x, ()):
                if y in nodes and y not in seen:
                    seen.add(y)
                    stack.append(y)
        comps.append(comp)
    return comps


def validate_decomposition(h, td):
    """Check the tree property, vertex cover, edge cover and running intersection."""
    out = []
    ids = set(td.bags)
    nbrs = {i: set() for i in ids}
    for a, b in td.edges:
        if a not in ids or b not in ids:
            out.append(Violation("tree", f"{a}-{b}", "edge references an unknown bag"))
            continue
        nbrs[a].add(b)
        nbrs[b].add(a)
    if ids and (len(td.edges) != len(ids) - 1 or len(_components(ids, nbrs)) != 1):
        out.append(Violation("tree", "T", "bag graph is not a tree"))
    covered = set().union(*td.bags.values()) if td.bags else set()
    for v in h.vertices:
        if v not in covered:
            out.append(Violation("vertex-cover", v, "vertex in no bag"))
    for v in sorted(covered - set(h.vertices)):
        out.append(Violation("vertex-cover", v, "bag holds an unknown vertex"))
    for e in h.edges:
        if not any(e <= b for b in td.bags.values()):
            out.append(Violation("edge-cover", "{" + ",".join(sorted(e)) + "}", "hyperedge in no bag"))
    for v in h.vertices:
        holding = {i for i, b in td.bags.items() if v in b}
        if holding and len(_components(holding, nbrs)) != 1:
            out.append(Violation("running-intersection", v, "bags containing the vertex are not a subtree"))
    return out


def check_edge_separation(h, td, edge):
    """Whether deleting tree edge ``edge`` separates the hypergraph outside the separator.

    Returns True iff the vertices reachable on the two sides of the edge are
    disjoint outside ``bags[x] & bags[y]`` and no hyperedge, restricted to the
    complement of that separator, touches both sides.
    """
    x, y = edge
    nbrs = {i: set(td.neighbors[i]) for i in td.bags}
    nbrs[x].discard(y)
    nbrs[y].discard(x)
    side_x = _components({i for i in td.bags}, nbrs)
    comp_x = next(c for c in side_x if x in c)
    comp_y = next(c for c in side_x if y in c)
    sep = td.bags[x] & td.bags[y]
    vx = set().union(*(td.bags[i] for i in comp_x)) - sep
    vy = set().union(*(td.bags[i] for i in comp_y)) - sep
    if vx & vy:
        return False
    for e in h.edges:
        rest = e - sep
        if rest & vx and rest & vy:
            return False
    return True
