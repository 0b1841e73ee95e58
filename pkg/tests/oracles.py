"""Independent reference computations and problem generators for the tests.

Nothing here calls the package's derivative or solver code.  The oracles
are finite differences, closed forms, brute-force tree-width and plain
dense linear algebra.
"""

import itertools
import math

import numpy as np

from graph_newton.functions import (Affine, LogCosh, Pendulum, Quadratic, Quartic, ScaledSum, Square,
                                    Tanh, TanhAffine)
from graph_newton.graph import CompGraph, NodeSpec, forward_eval, objective_value

FD_STEP = 1e-5


# --------------------------------------------------------------------------
# finite differences


def fd_gradient(fun, x, scale=FD_STEP):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        h = scale * (1.0 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def fd_jacobian(fun, x, scale=FD_STEP):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        h = scale * (1.0 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def substituted(g):
    """``f(x)`` over the flat input vector by plain forward evaluation."""
    ids = g.input_ids

    def f(x):
        out, o = {}, 0
        for v in ids:
            out[v] = x[o:o + g.dim(v)]
            o += g.dim(v)
        return objective_value(g, forward_eval(g, out))

    return f


def flat_to_inputs(g, x):
    out, o = {}, 0
    for v in g.input_ids:
        out[v] = np.array(x[o:o + g.dim(v)])
        o += g.dim(v)
    return out


def inputs_to_flat(g, inputs):
    return np.concatenate([np.asarray(inputs[v], dtype=float) for v in g.input_ids])


# --------------------------------------------------------------------------
# tree-width


def primal_adjacency(vertices, edges):
    adj = {v: set() for v in vertices}
    for e in edges:
        for a in e:
            adj[a] |= set(e) - {a}
    return adj


def elimination_width(adj, order):
    adj = {v: set(n) for v, n in adj.items()}
    width = 0
    for v in order:
        nb = adj.pop(v)
        width = max(width, len(nb))
        for a in nb:
            adj[a].discard(v)
            adj[a] |= nb - {a}
    return width


def brute_force_treewidth(adj):
    """Minimum elimination width over all vertex orderings (small graphs only)."""
    vs = sorted(adj)
    if not vs:
        return -1
    return min(elimination_width(adj, p) for p in itertools.permutations(vs))


def exact_treewidth(adj):
    """Subset dynamic programme ``TW(S) = min_v max(TW(S - v), |Q(S - v, v)|)``."""
    vs = sorted(adj)
    n = len(vs)
    if n == 0:
        return -1
    idx = {v: i for i, v in enumerate(vs)}
    nb = [0] * n
    for v, ns in adj.items():
        for w in ns:
            nb[idx[v]] |= 1 << idx[w]

    def q(S, v):
        # vertices outside S + {v} reachable from v through S
        seen = 1 << v
        frontier = 1 << v
        reach = 0
        while frontier:
            nxt = 0
            f = frontier
            while f:
                b = f & -f
                f ^= b
                i = b.bit_length() - 1
                nxt |= nb[i]
            nxt &= ~seen
            seen |= nxt
            reach |= nxt & ~S
            frontier = nxt & S
        return bin(reach).count("1")

    full = (1 << n) - 1
    tw = {0: -1}
    for size in range(1, n + 1):
        for combo in itertools.combinations(range(n), size):
            S = sum(1 << i for i in combo)
            best = math.inf
            for v in combo:
                rest = S & ~(1 << v)
                best = min(best, max(tw[rest], q(rest, v)))
            tw[S] = best
    return tw[full]


# --------------------------------------------------------------------------
# generators


def random_dag_structure(rng, n_nodes, max_parents=3, n_inputs=None):
    n_inputs = n_inputs or int(rng.integers(1, max(2, n_nodes // 3) + 1))
    parents = []
    for i in range(n_nodes):
        if i < n_inputs:
            parents.append(())
        else:
            k = int(rng.integers(1, min(max_parents, i) + 1))
            parents.append(tuple(sorted(rng.choice(i, size=k, replace=False).tolist())))
    return parents


def _random_function(rng, in_dims, out_dim, kinds):
    kind = kinds[int(rng.integers(len(kinds)))]
    n_in = sum(in_dims)
    A = rng.normal(size=(out_dim, n_in)) / np.sqrt(n_in)
    if kind == "tanh_affine":
        return TanhAffine(A, 0.3 * rng.normal(size=out_dim), in_dims=in_dims)
    if kind == "tanh" and n_in == out_dim:
        return Tanh(in_dims)
    if kind == "square" and n_in == out_dim:
        return Square(in_dims)
    if kind == "scaled_sum" and len(set(in_dims)) == 1 and in_dims[0] == out_dim:
        return ScaledSum(rng.normal(size=len(in_dims)), in_dims)
    return Affine(A, rng.normal(size=out_dim), in_dims=in_dims)


def _random_objective(rng, d, kinds):
    kind = kinds[int(rng.integers(len(kinds)))]
    c = rng.normal(size=d)
    if kind == "log_cosh":
        return LogCosh(rng.uniform(0.5, 2.0, d), c, in_dims=(d,))
    if kind == "quartic":
        return Quartic(rng.uniform(0.1, 0.5, d), c, in_dims=(d,))
    M = rng.normal(size=(d, d))
    return Quadratic(M @ M.T + 0.5 * np.eye(d), c, in_dims=(d,))


def random_graph(rng, n_nodes=None, func_kinds=("tanh_affine", "affine", "tanh", "square", "scaled_sum"),
                 obj_kinds=("quadratic", "log_cosh", "quartic"), family_objective=True):
    """Random computational graph with dims 1..3 and mixed registry functions."""
    n_nodes = n_nodes or int(rng.integers(3, 13))
    structure = random_dag_structure(rng, n_nodes)
    dims = [int(rng.integers(1, 4)) for _ in range(n_nodes)]
    nodes = []
    for i, pa in enumerate(structure):
        nid = f"n{i}"
        if not pa:
            # a quadratic on every input keeps the problem bounded below
            obj = Quadratic(rng.uniform(0.5, 1.5), rng.normal(size=dims[i]), in_dims=(dims[i],))
            nodes.append(NodeSpec(nid, dims[i], objective=obj))
            continue
        in_dims = tuple(dims[p] for p in pa)
        func = _random_function(rng, in_dims, dims[i], func_kinds)
        if family_objective and rng.random() < 0.3:
            obj = Quadratic(np.eye(dims[i] + sum(in_dims)) * rng.uniform(0.2, 1.0),
                            rng.normal(size=dims[i] + sum(in_dims)),
                            in_dims=(dims[i],) + in_dims, scope="family")
        elif rng.random() < 0.8:
            obj = _random_objective(rng, dims[i], obj_kinds)
        else:
            obj = None
        nodes.append(NodeSpec(nid, dims[i], tuple(f"n{p}" for p in pa), func, obj))
    return CompGraph(nodes).check()


def random_chain(rng, n=None):
    """Chain ``x_{i+1} = phi(x_i, u_i)`` with mixed dims and tanh/affine dynamics."""
    n = n or int(rng.integers(2, 11))
    nx = int(rng.integers(1, 4))
    nodes = [NodeSpec("x0", nx, objective=Quadratic(1.0, rng.normal(size=nx), in_dims=(nx,)))]
    for i in range(n):
        nu = int(rng.integers(1, 4))
        nodes.append(NodeSpec(f"u{i}", nu, objective=Quadratic(1.0, in_dims=(nu,))))
        A = rng.normal(size=(nx, nx + nu)) / np.sqrt(nx + nu)
        func = TanhAffine(A, 0.2 * rng.normal(size=nx), in_dims=(nx, nu)) if rng.random() < 0.6 \
            else Affine(A, in_dims=(nx, nu))
        obj = Quadratic(rng.uniform(0.5, 2.0), rng.normal(size=nx), in_dims=(nx,))
        nodes.append(NodeSpec(f"x{i + 1}", nx, (f"x{i}", f"u{i}"), func, obj))
    return CompGraph(nodes).check()


def random_inputs(rng, g, scale=1.0):
    return {v: scale * rng.normal(size=g.dim(v)) for v in g.input_ids}


def rosenbrock_graph():
    """``(1 - a)^2 + 100 (b - a^2)^2`` from ``y = a^2`` and ``z = b - y``."""
    nodes = [
        NodeSpec("a", 1, objective=Quadratic(2.0, [1.0], in_dims=(1,))),
        NodeSpec("b", 1),
        NodeSpec("y", 1, ("a",), Square((1,))),
        NodeSpec("z", 1, ("b", "y"), Affine([[1.0, -1.0]], in_dims=(1, 1)),
                 Quadratic(200.0, in_dims=(1,))),
    ]
    return CompGraph(nodes).check()


def rosenbrock(x):
    a, b = x
    return (1 - a) ** 2 + 100 * (b - a * a) ** 2


def rosenbrock_grad(x):
    a, b = x
    return np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])


def rosenbrock_hess(x):
    a, b = x
    return np.array([[2 - 400 * b + 1200 * a * a, -400 * a], [-400 * a, 200.0]])


def pendulum_graph(n=10, dt=0.1):
    """The pendulum chain written out by hand, independent of the control module."""
    from graph_newton.functions import FixFirst, FixFirstObjective, Terms

    f = Pendulum(dt=dt, damping=0.1)
    goal = np.array([math.pi, 0.0, 0.0])
    stage = Quadratic([0.1, 0.1, 0.05], goal, in_dims=(2, 1))
    term = Quadratic(10.0, goal[:2], in_dims=(2,))
    x0 = np.zeros(2)
    nodes = []
    for i in range(n):
        nodes.append(NodeSpec(f"u{i}", 1, objective=FixFirstObjective(stage, x0) if i == 0 else None))
        if i == 0:
            terms = [(term, [0])] if n == 1 else []
            nodes.append(NodeSpec("x1", 2, ("u0",), FixFirst(f, x0),
                                  Terms(terms, (2, 1)) if terms else None))
        else:
            terms = [(stage, [1, 2])] + ([(term, [0])] if i == n - 1 else [])
            nodes.append(NodeSpec(f"x{i + 1}", 2, (f"x{i}", f"u{i}"), f, Terms(terms, (2, 2, 1))))
    return CompGraph(nodes).check()


# --------------------------------------------------------------------------
# reference optimizers


def dense_newton_step(H, g):
    return -np.linalg.solve(H, g)


def reference_newton(f, grad, hess, x0, tol=1e-8, max_iters=100, c=1e-4, shrink=0.5, max_bt=40,
                     mus=None):
    """Plain dense Newton with the same Levenberg and Armijo policy as the package."""
    if mus is None:
        mus = [0.0] + [1e-6 * 10.0 ** k for k in range(13)]
    x = np.array(x0, dtype=float)
    xs = [x.copy()]
    for _ in range(max_iters):
        g = grad(x)
        if np.max(np.abs(g)) <= tol:
            break
        H = hess(x)
        for mu in mus:
            Hm = H + mu * np.eye(x.size)
            if np.linalg.eigvalsh(Hm).min() <= 0:
                continue
            d = -np.linalg.solve(Hm, g)
            if g @ d < 0:
                break
        f0 = f(x)
        eta = 1.0
        slack = 10 * np.finfo(float).eps * (1 + abs(f0))
        for _ in range(max_bt + 1):
            if f(x + eta * d) <= f0 + c * eta * (g @ d) + slack:
                break
            eta *= shrink
        x = x + eta * d
        xs.append(x.copy())
    return xs


def oc_rollout(f, x0, us):
    """Explicit loop ``x_{i+1} = f(x_i, u_i)``."""
    xs = [np.asarray(x0, dtype=float)]
    for u in us:
        xs.append(np.asarray(f.value([xs[-1], np.atleast_1d(u)]), dtype=float))
    return np.array(xs)


def kkt_corpus(seed=2024):
    """``(name, graph, inputs)`` triples covering every generator and preset."""
    from graph_newton.bench import make_instance
    from graph_newton.control import build_chain, preset

    rng = np.random.default_rng(seed)
    out = []
    for i in range(30):
        g = random_graph(rng)
        out.append((f"dag{i}", g, random_inputs(rng, g)))
    for i in range(15):
        g = random_chain(rng)
        out.append((f"chain{i}", g, random_inputs(rng, g)))
    for name in ("lqr-scalar", "lqr-mimo", "pendulum-swingup"):
        g = build_chain(preset(name))
        out.append((name, g, random_inputs(rng, g, 0.5)))
    g = rosenbrock_graph()
    out.append(("rosenbrock", g, {"a": np.array([-1.2]), "b": np.array([1.0])}))
    for fam, n in (("oc-chain", 16), ("random-tree", 40), ("grid-k", 5)):
        g, x = make_instance(fam, n, seed=1)
        out.append((f"{fam}-{n}", g, x))
    return out


def registry_function_instance(name, rng):
    """``(func, parent_dims, out_dim)`` for one registered node function."""
    from graph_newton.functions import FixFirst

    if name == "affine":
        return Affine(rng.normal(size=(2, 5)), rng.normal(size=2), in_dims=(2, 3)), (2, 3), 2
    if name == "tanh":
        return Tanh((2, 1)), (2, 1), 3
    if name == "tanh_affine":
        return TanhAffine(rng.normal(size=(3, 3)), rng.normal(size=3), in_dims=(1, 2)), (1, 2), 3
    if name == "square":
        return Square((3,)), (3,), 3
    if name == "scaled_sum":
        return ScaledSum([0.5, -1.5, 2.0], (2, 2, 2)), (2, 2, 2), 2
    if name == "pendulum":
        return Pendulum(dt=0.1, damping=0.2), (2, 1), 2
    if name == "fix_first":
        return FixFirst(Pendulum(dt=0.1), rng.normal(size=2)), (1,), 2
    raise KeyError(name)


def single_function_graph(name, rng):
    """Inputs feeding one registered function, with a nonlinear loss on its output."""
    func, pdims, out = registry_function_instance(name, rng)
    nodes = [NodeSpec(f"p{j}", d, objective=Quadratic(0.5, in_dims=(d,))) for j, d in enumerate(pdims)]
    obj = LogCosh(np.linspace(0.5, 1.5, out), rng.normal(size=out), in_dims=(out,))
    nodes.append(NodeSpec("y", out, tuple(f"p{j}" for j in range(len(pdims))), func, obj))
    # a second, quadratic-loss layer exercises the dual-weighted curvature
    nodes.append(NodeSpec("z", 1, ("y",), TanhAffine(rng.normal(size=(1, out)), [0.1], in_dims=(out,)),
                          Quartic(1.0, [0.3], in_dims=(1,))))
    return CompGraph(nodes).check()


def registry_objective_instance(name, rng, d):
    from graph_newton.functions import FixFirstObjective, Terms

    if name == "quadratic":
        M = rng.normal(size=(d, d))
        return Quadratic(M @ M.T + np.eye(d), rng.normal(size=d), in_dims=(d,))
    if name == "log_cosh":
        return LogCosh(rng.uniform(0.5, 2, d), rng.normal(size=d), in_dims=(d,))
    if name == "quartic":
        return Quartic(rng.uniform(0.5, 2, d), rng.normal(size=d), in_dims=(d,))
    if name == "terms":
        return Terms([(LogCosh(1.0, 0.3 * np.ones(d), in_dims=(d,)), [0]),
                      (Quartic(0.5, np.zeros(d), in_dims=(d,)), [0])], (d,), scope="self")
    if name == "fix_first":
        return FixFirstObjective(Quartic(1.0, np.zeros(2 + d), in_dims=(2, d)), rng.normal(size=2))
    raise KeyError(name)


def single_objective_graph(name, rng):
    """One registered objective on a node computed from the inputs."""
    d = 2
    obj = registry_objective_instance(name, rng, d)
    nodes = [NodeSpec("a", d, objective=Quadratic(0.1, in_dims=(d,))),
             NodeSpec("b", d, ("a",), TanhAffine(rng.normal(size=(d, d)), in_dims=(d,)), obj)]
    return CompGraph(nodes).check()
