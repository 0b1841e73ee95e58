import csv
import io
import math

import numpy as np
import pytest

import oracles as O
from graph_newton.exceptions import LinesearchFailError, NonDescentError
from graph_newton.functions import Affine, Quadratic
from graph_newton.graph import CompGraph, NodeSpec
from graph_newton.newton import (TRACE_COLUMNS, NewtonConfig, armijo_backtrack, linesearch, mu_schedule,
                                 newton_step, optimize)

START = {"a": np.array([-1.2]), "b": np.array([1.0])}


def test_config_validation():
    for bad in ({"tol": 0}, {"shrink": 1.0}, {"mu_growth": 1.0}, {"max_iters": -1}, {"solver": "lu"}):
        with pytest.raises(ValueError):
            NewtonConfig(**bad)


def test_mu_schedule_values():
    mus = mu_schedule(NewtonConfig())
    assert mus[0] == 0.0 and mus[1] == 1e-6
    assert len(mus) == 14 and mus[-1] == pytest.approx(1e6)


def test_rosenbrock_matches_reference_newton():
    ref = O.reference_newton(O.rosenbrock, O.rosenbrock_grad, O.rosenbrock_hess, [-1.2, 1.0])
    for solver in ("tree", "dense"):
        _, trace = optimize(O.rosenbrock_graph(), START, NewtonConfig(solver=solver))
        xs = [np.array([r.inputs["a"][0], r.inputs["b"][0]]) for r in trace.records]
        assert len(xs) == len(ref)
        assert max(np.abs(a - b).max() for a, b in zip(xs, ref)) < 1e-9
        assert np.allclose(xs[-1], [1.0, 1.0], atol=1e-10)


def test_objective_monotone_and_trace_fields():
    _, trace = optimize(O.rosenbrock_graph(), START)
    f = trace.column("objective")
    assert np.all(np.diff(f) <= 1e-12 * (1 + np.abs(f[:-1])))
    last = trace.records[-1]
    assert math.isnan(last.eta) and math.isnan(last.mu)
    assert all(0 < r.eta <= 1 for r in trace.records[:-1])


def test_regularization_kicks_in_on_indefinite_hessian():
    x = {"a": np.array([0.0]), "b": np.array([1.0])}  # Hessian diag(-398, 200)
    step, info = newton_step(O.rosenbrock_graph(), x)
    assert info["mu"] > 0
    assert info["gtd"] < 0
    assert info["inertia"] == (4, 2, 0)


def test_non_descent_when_schedule_too_short():
    x = {"a": np.array([0.0]), "b": np.array([1.0])}
    with pytest.raises(NonDescentError):
        newton_step(O.rosenbrock_graph(), x, NewtonConfig(mu0=1e-6, mu_max=1e-3))


def test_zero_gradient_returns_zero_step():
    step, info = newton_step(O.rosenbrock_graph(), {"a": np.array([1.0]), "b": np.array([1.0])})
    assert info["grad_inf"] == 0 and not step["a"].any()


def test_max_iter_status():
    _, trace = optimize(O.rosenbrock_graph(), START, NewtonConfig(max_iters=3))
    assert trace.status == "max_iter" and trace.n_iter == 3


def test_armijo_backtrack():
    cfg = NewtonConfig()
    eta, f = armijo_backtrack(lambda e: (1 - e) ** 2, 1.0, -2.0, cfg)
    assert eta == 1.0 and f == 0.0
    eta, _ = armijo_backtrack(lambda e: (1 - 4 * e) ** 2, 1.0, -8.0, cfg)
    assert eta == 0.25
    with pytest.raises(LinesearchFailError):
        armijo_backtrack(lambda e: 1.0, 1.0, 1.0, cfg)
    with pytest.raises(LinesearchFailError):
        armijo_backtrack(lambda e: 2.0, 1.0, -1.0, NewtonConfig(max_backtracks=3))


def test_linesearch_full_step_on_quadratic():
    g = CompGraph([NodeSpec("x", 2), NodeSpec("y", 2, ("x",), Affine(np.eye(2) * 2, in_dims=(2,)),
                                               Quadratic(1.0, [1.0, -1.0], in_dims=(2,)))]).check()
    x = {"x": np.array([3.0, 4.0])}
    step, _ = newton_step(g, x)
    assert linesearch(g, x, step) == 1.0
    assert np.allclose(x["x"] + step["x"], [0.5, -0.5])


def test_trace_csv_columns(tmp_path):
    _, trace = optimize(O.rosenbrock_graph(), START)
    text = trace.to_csv()
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == len(trace) + 1
    assert float(rows[-1][2]) == trace.records[-1].grad_inf
    p = tmp_path / "t.csv"
    trace.to_csv(p)
    assert p.read_text() == text


def test_tree_and_dense_backends_agree():
    rng = np.random.default_rng(3)
    for _ in range(5):
        g = O.random_chain(rng, n=4)
        x0 = O.random_inputs(rng, g)
        xt, tt = optimize(g, x0, NewtonConfig(solver="tree"))
        xd, td = optimize(g, x0, NewtonConfig(solver="dense"))
        assert tt.n_iter == td.n_iter
        for v in g.input_ids:
            assert np.allclose(xt[v], xd[v], atol=1e-9)
