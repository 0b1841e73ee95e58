import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles as O
from graph_newton.exceptions import DimensionError, GraphError
from graph_newton.functions import Affine, Quadratic, Square
from graph_newton.graph import (CompGraph, NodeSpec, constraint_residuals, forward_eval, objective_value,
                                split_inputs, stack_inputs, validate_graph)


def kinds(nodes):
    return {v.kind for v in CompGraph(nodes).violations}


def test_valid_graph_has_no_violations():
    g = O.rosenbrock_graph()
    assert validate_graph(g) == []
    assert g.input_ids == ("a", "b")
    assert g.order.index("y") < g.order.index("z")


def test_cycle_detected():
    f = Affine([[1.0]], in_dims=(1,))
    nodes = [NodeSpec("a", 1, ("b",), f), NodeSpec("b", 1, ("a",), f)]
    assert "cycle" in kinds(nodes)
    with pytest.raises(GraphError):
        CompGraph(nodes).check()


@pytest.mark.parametrize("nodes,kind", [
    ([NodeSpec("a", 1), NodeSpec("a", 1)], "duplicate-id"),
    ([NodeSpec("a", 0)], "bad-dim"),
    ([NodeSpec("a", 1, ("a",), Affine([[1.0]], in_dims=(1,)))], "self-loop"),
    ([NodeSpec("a", 1, ("q",), Affine([[1.0]], in_dims=(1,)))], "unknown-parent"),
    ([NodeSpec("a", 1), NodeSpec("b", 1, ("a",))], "missing-function"),
    ([NodeSpec("a", 1, (), Square((1,)))], "unexpected-function"),
    ([NodeSpec("a", 2), NodeSpec("b", 1, ("a",), Affine([[1.0]], in_dims=(1,)))], "function-input-dim"),
    ([NodeSpec("a", 1), NodeSpec("b", 2, ("a",), Affine([[1.0]], in_dims=(1,)))], "function-output-dim"),
    ([NodeSpec("a", 2, objective=Quadratic(1.0, in_dims=(1,)))], "objective-dim"),
])
def test_violation_kinds(nodes, kind):
    assert kind in kinds(nodes)


def test_forward_eval_and_objective():
    g = O.rosenbrock_graph()
    s = forward_eval(g, {"a": np.array([2.0]), "b": np.array([1.0])})
    assert s["y"].tolist() == [4.0] and s["z"].tolist() == [-3.0]
    assert objective_value(g, s) == pytest.approx(O.rosenbrock([2.0, 1.0]))
    assert all(not np.any(r) for r in constraint_residuals(g, s).values())


def test_forward_eval_rejects_bad_inputs():
    g = O.rosenbrock_graph()
    with pytest.raises(DimensionError):
        forward_eval(g, {"a": np.array([1.0])})
    with pytest.raises(DimensionError):
        forward_eval(g, {"a": np.array([1.0, 2.0]), "b": np.array([1.0])})


@given(st.integers(0, 2**32 - 1))
def test_stack_split_round_trip(seed):
    rng = np.random.default_rng(seed)
    g = O.random_graph(rng)
    x = rng.normal(size=g.n_inputs_total)
    assert np.array_equal(stack_inputs(g, split_inputs(g, x)), x)


@given(st.integers(0, 2**32 - 1))
def test_topological_order_respects_parents(seed):
    g = O.random_graph(np.random.default_rng(seed))
    pos = {v: i for i, v in enumerate(g.order)}
    for n in g.nodes:
        assert all(pos[p] < pos[n.id] for p in n.parents)
