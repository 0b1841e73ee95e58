import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles as O
from graph_newton.autodiff import (HessianAsymmetryWarning, accumulate_dense_hessian, hessian_vector,
                                   input_gradient, reverse_grad)
from graph_newton.graph import forward_eval, stack_inputs

seeds = st.integers(0, 2**32 - 1)


def test_rosenbrock_closed_form():
    g = O.rosenbrock_graph()
    for a, b in [(-1.2, 1.0), (0.3, -0.7), (1.0, 1.0)]:
        s = forward_eval(g, {"a": np.array([a]), "b": np.array([b])})
        assert np.allclose(input_gradient(g, s), O.rosenbrock_grad([a, b]), rtol=1e-13)
        assert np.allclose(accumulate_dense_hessian(g, s), O.rosenbrock_hess([a, b]), rtol=1e-13)


@given(seeds)
def test_gradient_matches_fd(seed):
    rng = np.random.default_rng(seed)
    g = O.random_graph(rng)
    x = O.random_inputs(rng, g)
    grad = stack_inputs(g, reverse_grad(g, forward_eval(g, x)))
    fd = O.fd_gradient(O.substituted(g), O.inputs_to_flat(g, x))
    assert np.allclose(grad, fd, rtol=1e-5, atol=1e-6)


@given(seeds)
def test_dense_hessian_matches_fd_of_gradient(seed):
    rng = np.random.default_rng(seed)
    g = O.random_chain(rng, n=int(rng.integers(1, 5)))
    x = O.random_inputs(rng, g)
    H = accumulate_dense_hessian(g, forward_eval(g, x))

    def grad(z):
        return stack_inputs(g, reverse_grad(g, forward_eval(g, O.flat_to_inputs(g, z))))

    fd = O.fd_jacobian(grad, O.inputs_to_flat(g, x))
    assert np.allclose(H, fd, rtol=1e-5, atol=1e-5)


@given(seeds)
def test_hvp_linear_in_direction(seed):
    rng = np.random.default_rng(seed)
    g = O.random_graph(rng)
    s = forward_eval(g, O.random_inputs(rng, g))
    duals = reverse_grad(g, s)
    u, w = O.random_inputs(rng, g), O.random_inputs(rng, g)
    uw = {v: 2 * u[v] - 3 * w[v] for v in u}
    hv = lambda d: stack_inputs(g, {v: t.dgrad for v, t in hessian_vector(g, s, duals, d).items() if v in d})
    assert np.allclose(hv(uw), 2 * hv(u) - 3 * hv(w), atol=1e-10 * (1 + np.abs(hv(uw)).max()))


def test_tangent_state_is_jacobian_vector_product():
    g = O.rosenbrock_graph()
    s = forward_eval(g, {"a": np.array([0.5]), "b": np.array([2.0])})
    t = hessian_vector(g, s, reverse_grad(g, s), {"a": np.array([1.0]), "b": np.array([0.0])})
    assert t["y"].dS.tolist() == [1.0]  # d(a^2)/da at a = 0.5
    assert t["z"].dS.tolist() == [-1.0]


def test_no_asymmetry_warning_on_registry_graphs():
    rng = np.random.default_rng(0)
    with warnings.catch_warnings():
        warnings.simplefilter("error", HessianAsymmetryWarning)
        for _ in range(10):
            g = O.random_graph(rng)
            _, asym = accumulate_dense_hessian(g, forward_eval(g, O.random_inputs(rng, g)),
                                               return_asymmetry=True)
            assert asym <= 1e-10


def test_asymmetry_warning_fires_for_bad_curvature():
    from graph_newton.functions import FiniteDifferenceFunction, Quadratic
    from graph_newton.graph import CompGraph, NodeSpec

    # a function whose "Hessian" is deliberately asymmetric
    class Skewed(FiniteDifferenceFunction):
        def weighted_hessian_flat(self, z, w):
            return np.array([[0.0, 1.0], [-1.0, 0.0]]) * float(w.sum())

    f = Skewed(lambda z: np.array([z[0] * z[1]]), (1, 1), 1)
    g = CompGraph([NodeSpec("a", 1), NodeSpec("b", 1),
                   NodeSpec("c", 1, ("a", "b"), f, Quadratic(1.0, [1.0], in_dims=(1,)))]).check()
    s = forward_eval(g, {"a": np.array([1.0]), "b": np.array([2.0])})
    with pytest.warns(HessianAsymmetryWarning):
        accumulate_dense_hessian(g, s)
