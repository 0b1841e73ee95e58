"""JSON problem files.

Layout::

    {
      "nodes": [
        {"id": "x", "dim": 1, "parents": [], "func": null,
         "objective": {"name": "quadratic", "params": {"weights": 1.0}}},
        {"id": "y", "dim": 1, "parents": ["x"],
         "func": {"name": "affine", "params": {"A": [[2.0]]}}, "objective": null}
      ],
      "inputs_init": {"x": [3.0]}
    }

``func`` and ``objective`` names resolve against the registries in
:mod:`graph_newton.functions`.  An objective record may carry
``"scope": "family"`` to read the states of ``(id, *parents)``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .exceptions import GraphError
from .functions import make_function, make_objective
from .graph import CompGraph, NodeSpec

__all__ = ["ProblemFormatError", "load_problem", "parse_problem", "dump_problem", "save_problem",
           "graph_fingerprint"]


class ProblemFormatError(ValueError):
    """The problem document is malformed or references unknown names."""


def _node_error(node_id, exc):
    return ProblemFormatError(f"node {node_id!r}: {exc}")


def parse_problem(doc):
    """Build ``(graph, inputs_init)`` from a decoded problem document.

    Raises
    ------
    ProblemFormatError
        For schema errors and unknown registry names.
    GraphError
        If the resulting graph violates a structural invariant.
    """
    if not isinstance(doc, dict) or not isinstance(doc.get("nodes"), list):
        raise ProblemFormatError("problem must be an object with a 'nodes' list")
    raw = doc["nodes"]
    dims = {}
    for i, nd in enumerate(raw):
        if not isinstance(nd, dict) or "id" not in nd or "dim" not in nd:
            raise ProblemFormatError(f"nodes[{i}] needs 'id' and 'dim'")
        try:
            dims.setdefault(str(nd["id"]), int(nd["dim"]))
        except (TypeError, ValueError) as exc:
            raise _node_error(nd["id"], f"bad dim ({exc})") from None
    specs = []
    for nd in raw:
        nid = str(nd["id"])
        parents = tuple(str(p) for p in (nd.get("parents") or ()))
        func = obj = None
        try:
            if nd.get("func") is not None:
                missing = [p for p in parents if p not in dims]
                if missing:
                    raise ValueError(f"unknown parent {missing[0]!r}")
                func = make_function(nd["func"], [dims[p] for p in parents], dims[nid])
            if nd.get("objective") is not None:
                rec = nd["objective"]
                scope = rec.get("scope", "self")
                member_dims = [dims[nid]]
                if scope == "family":
                    missing = [p for p in parents if p not in dims]
                    if missing:
                        raise ValueError(f"unknown parent {missing[0]!r}")
                    member_dims += [dims[p] for p in parents]
                obj = make_objective(rec, member_dims)
        except (KeyError, TypeError, ValueError) as exc:
            raise _node_error(nid, exc) from None
        specs.append(NodeSpec(nid, int(nd["dim"]), parents, func, obj))
    g = CompGraph(specs)
    if g.violations:
        raise GraphError(g.violations)
    init = {}
    for key, val in (doc.get("inputs_init") or {}).items():
        if key not in g or g[key].parents:
            raise ProblemFormatError(f"inputs_init names {key!r}, which is not an input node")
        arr = np.asarray(val, dtype=float).reshape(-1)
        if arr.size != g.dim(key):
            raise ProblemFormatError(f"inputs_init[{key!r}] has length {arr.size}, expected {g.dim(key)}")
        init[key] = arr
    for v in g.input_ids:
        init.setdefault(v, np.zeros(g.dim(v)))
    return g, {v: init[v] for v in g.input_ids}


def load_problem(path):
    """Read a problem file; see :func:`parse_problem`."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"{path}: invalid JSON ({exc})") from None
    return parse_problem(doc)


def dump_problem(g, inputs=None):
    """Problem document for ``g`` with optional initial inputs."""
    nodes = []
    for n in g.nodes:
        nodes.append({
            "id": n.id,
            "dim": n.dim,
            "parents": list(n.parents),
            "func": n.func.to_record() if n.func is not None else None,
            "objective": n.objective.to_record() if n.objective is not None else None,
        })
    doc = {"nodes": nodes}
    if inputs is not None:
        doc["inputs_init"] = {v: np.asarray(inputs[v], dtype=float).tolist() for v in g.input_ids}
    return doc


def save_problem(g, path, inputs=None):
    Path(path).write_text(json.dumps(dump_problem(g, inputs), indent=2) + "\n", encoding="utf-8")


def graph_fingerprint(g):
    """SHA-256 of the canonical JSON of the graph (nodes in storage order)."""
    text = json.dumps(dump_problem(g), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
