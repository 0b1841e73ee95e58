"""Node functions, local objectives and the built-in registry.

Every node function maps the concatenation of its parents' states to the
node's own state and supplies analytic first derivatives and the
multiplier-weighted second derivative.  Local objectives map the
concatenation of their member states to a scalar.  Blocks are always laid
out in parent order; that ordering is the column order of every Jacobian
block downstream.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NodeFunction",
    "LocalObjective",
    "Affine",
    "Tanh",
    "TanhAffine",
    "Square",
    "ScaledSum",
    "Pendulum",
    "FixFirst",
    "Quadratic",
    "LogCosh",
    "Quartic",
    "Terms",
    "FixFirstObjective",
    "FiniteDifferenceFunction",
    "FiniteDifferenceObjective",
    "FUNCTIONS",
    "OBJECTIVES",
    "register_function",
    "register_objective",
    "make_function",
    "make_objective",
    "fd_step",
]


def fd_step(z, scale=1e-5):
    """Per-coordinate central-difference step ``scale * (1 + |z|)``."""
    return scale * (1.0 + np.abs(z))


def _split(z, dims):
    out, start = [], 0
    for d in dims:
        out.append(z[start:start + d])
        start += d
    return out


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


class NodeFunction:
    """Differentiable map Phi from concatenated parent states to a node state.

    Subclasses implement the ``*_flat`` methods on the concatenated input;
    the per-parent methods are derived from them.

    Parameters
    ----------
    in_dims : sequence of int
        State dimension of each parent, in parent order.
    out_dim : int
        Dimension of the produced state.
    """

    name = None

    def __init__(self, in_dims, out_dim):
        self.in_dims = tuple(int(d) for d in in_dims)
        self.out_dim = int(out_dim)
        self.params = {}

    @property
    def in_dim(self):
        return sum(self.in_dims)

    def value_flat(self, z):
        raise NotImplementedError

    def jacobian_flat(self, z):
        """Jacobian of shape ``(out_dim, in_dim)``."""
        raise NotImplementedError

    def weighted_hessian_flat(self, z, lam):
        """``sum_k lam_k * d^2 Phi_k / dz^2`` of shape ``(in_dim, in_dim)``."""
        raise NotImplementedError

    def value(self, parents):
        return self.value_flat(np.concatenate(parents))

    def jacobian(self, parents):
        J = self.jacobian_flat(np.concatenate(parents))
        out, start = [], 0
        for d in self.in_dims:
            out.append(J[:, start:start + d])
            start += d
        return out

    def weighted_hessian(self, parents, lam):
        return self.weighted_hessian_flat(np.concatenate(parents), np.asarray(lam, dtype=float))

    def to_record(self):
        if self.name is None:
            raise TypeError(f"{type(self).__name__} is not registered and cannot be serialized")
        return {"name": self.name, "params": _jsonable(self.params)}

    def __repr__(self):
        return f"{type(self).__name__}(in_dims={self.in_dims}, out_dim={self.out_dim})"


class LocalObjective:
    """Scalar local objective over the concatenated states of its members.

    ``scope`` selects the members: ``"self"`` for the owning node only,
    ``"family"`` for the owning node followed by its parents.
    """

    name = None

    def __init__(self, in_dims, scope="self"):
        if scope not in ("self", "family"):
            raise ValueError(f"scope must be 'self' or 'family', got {scope!r}")
        self.in_dims = tuple(int(d) for d in in_dims)
        self.scope = scope
        self.params = {}

    @property
    def in_dim(self):
        return sum(self.in_dims)

    def value_flat(self, z):
        raise NotImplementedError

    def gradient_flat(self, z):
        raise NotImplementedError

    def hessian_flat(self, z):
        raise NotImplementedError

    def value(self, states):
        return float(self.value_flat(np.concatenate(states)))

    def gradient(self, states):
        return _split(self.gradient_flat(np.concatenate(states)), self.in_dims)

    def hessian(self, states):
        H = self.hessian_flat(np.concatenate(states))
        rows = _split(np.arange(H.shape[0]), self.in_dims)
        return [[H[np.ix_(r, c)] for c in rows] for r in rows]

    def to_record(self):
        if self.name is None:
            raise TypeError(f"{type(self).__name__} is not registered and cannot be serialized")
        return {"name": self.name, "params": _jsonable(self.params), "scope": self.scope}

    def __repr__(self):
        return f"{type(self).__name__}(in_dims={self.in_dims}, scope={self.scope!r})"


FUNCTIONS = {}
OBJECTIVES = {}


def register_function(name):
    """Class decorator adding a node function to the registry under ``name``.

    The class must provide ``from_params(params, in_dims, out_dim)``.
    """
    def deco(cls):
        cls.name = name
        FUNCTIONS[name] = cls
        return cls
    return deco


def register_objective(name):
    def deco(cls):
        cls.name = name
        OBJECTIVES[name] = cls
        return cls
    return deco


def make_function(record, in_dims, out_dim):
    """Build a registered node function from ``{name, params}``."""
    name = record.get("name")
    if name not in FUNCTIONS:
        raise ValueError(f"unknown node function {name!r}; known: {sorted(FUNCTIONS)}")
    return FUNCTIONS[name].from_params(dict(record.get("params") or {}), tuple(in_dims), int(out_dim))


def make_objective(record, in_dims):
    """Build a registered local objective from ``{name, params, scope}``."""
    name = record.get("name")
    if name not in OBJECTIVES:
        raise ValueError(f"unknown objective {name!r}; known: {sorted(OBJECTIVES)}")
    scope = record.get("scope", "self")
    return OBJECTIVES[name].from_params(dict(record.get("params") or {}), tuple(in_dims), scope)


def _as_matrix(a, rows, cols, what):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape != (rows, cols):
        raise ValueError(f"{what} has shape {a.shape}, expected {(rows, cols)}")
    return a


def _as_vector(b, n, what, default=0.0):
    if b is None:
        return np.full(n, default, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.size == 1 and n != 1:
        b = np.full(n, b.item())
    if b.shape != (n,):
        raise ValueError(f"{what} has length {b.size}, expected {n}")
    return b


# --------------------------------------------------------------------------
# node functions


@register_function("affine")
class Affine(NodeFunction):
    """``A @ z + b`` over the concatenated parents."""

    def __init__(self, A, b=None, in_dims=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        super().__init__(in_dims if in_dims is not None else (A.shape[1],), A.shape[0])
        self.A = _as_matrix(A, self.out_dim, self.in_dim, "A")
        self.b = _as_vector(b, self.out_dim, "b")
        self.params = {"A": self.A, "b": self.b}

    @classmethod
    def from_params(cls, params, in_dims, out_dim):
        return cls(params["A"], params.get("b"), in_dims=in_dims)

    def value_flat(self, z):
        return self.A @ z + self.b

    def jacobian_flat(self, z):
        return self.A.copy()

    def weighted_hessian_flat(self, z, lam):
        return np.zeros((self.in_dim, self.in_dim))


@register_function("tanh")
class Tanh(NodeFunction):
    """Elementwise ``tanh`` of the concatenated parents."""

    def __init__(self, in_dims):
        super().__init__(in_dims, sum(in_dims))

    @classmethod
    def from_params(cls, params, in_dims, out_dim):
        return cls(in_dims)

    def value_flat(self, z):
        return np.tanh(z)

    def jacobian_flat(self, z):
        t = np.tanh(z)
        return np.diag(1.0 - t * t)

    def weighted_hessian_flat(self, z, lam):
        t = np.tanh(z)
        return np.diag(lam * (-2.0 * t * (1.0 - t * t)))


@register_function("tanh_affine")
class TanhAffine(NodeFunction):
    """``tanh(A @ z + b)``, a dense layer with tanh activation."""

    def __init__(self, A, b=None, in_dims=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        super().__init__(in_dims if in_dims is not None else (A.shape[1],), A.shape[0])
        self.A = _as_matrix(A, self.out_dim, self.in_dim, "A")
        self.b = _as_vector(b, self.out_dim, "b")
        self.params = {"A": self.A, "b": self.b}

    @classmethod
    def from_params(cls, params, in_dims, out_dim):
        return cls(params["A"], params.get("b"), in_dims=in_dims)

    def value_flat(self, z):
        return np.tanh(self.A @ z + self.b)

    def jacobian_flat(self, z):
        t = np.tanh(self.A @ z + self.b)
        return (1.0 - t * t)[:, None] * self.A

    def weighted_hessian_flat(self, z, lam):
        t = np.tanh(self.A @ z + self.b)
        w = lam * (-2.0 * t * (1.0 - t * t))
        return self.A.T @ (w[:, None] * self.A)


@register_function("square")
class Square(NodeFunction):
    """Elementwise square of the concatenated parents."""

    def __init__(self, in_dims):
        super().__init__(in_dims, sum(in_dims))

    @classmethod
    def from_params(cls, params, in_dims, out_dim):
        return cls(in_dims)

    def value_flat(self, z):
        return z * z

    def jacobian_flat(self, z):
        return np.diag(2.0 * z)

    def weighted_hessian_flat(self, z, lam):
        return np.diag(2.0 * lam)


@register_function("scaled_sum")
class ScaledSum(NodeFunction):
    """``sum_k w_k * parent_k`` for parents of equal dimension."""

    def __init__(self, weights, in_dims):
        in_dims = tuple(in_dims)
        if len(set(in_dims)) > 1:
            raise ValueError(f"scaled_sum needs equal parent dims, got {in_dims}")
        super().__init__(in_dims, in_dims[0] if in_dims else 0)
        self.weights = _as_vector(weights, len(in_dims), "weights", default=1.0)
        self.params = {"weights": self.weights}
        self._J = np.hstack([w * np.eye(self.out_dim) for w in self.weights])

    @classmethod
    def from_params(cls, params, in_dims, out_dim):
        return cls(params.get("weights"), in_dims)

    def value_flat(self, z):
        return self._J @ z

    def jacobian_flat(self, z):
        return self._J.copy()

    def weighted_hessian_flat(self, z, lam):
        return np.zeros((self.in_dim, self.in_dim))


@register_function("pendulum")
class Pendulum(NodeFunction):
    """Explicit-Euler damped pendulum; parents are ``(x, u)``, ``x = (theta, omega)``.

    ``theta+ = theta + dt*omega``,
    ``omega+ = omega + dt*(-(g/L) sin(theta) - c*omega + u/(m L^2))``.
    """

    def __init__(self, dt=0.1, gravity=9.81, length=1.0, mass=1.0, damping=0.0):
        super().__init__((2, 1), 2)
        self.dt, self.gravity, self.length = float(dt), float(gravity), float(length)
        self.mass, self.damping = float(mass), float(damping)
        self.params = {"dt": self.dt, "gravity": self.gravity, "length": self.length,
                       "mass": self.mass, "damping": self.damping}

    @classmethod
    def from_params(cls, params, in_dims, out_dim):
        obj = cls(**params)
        if tuple(in_dims) != (2, 1):
            # keep the declared dims so validation reports the mismatch
            obj.in_dims = tuple(in_dims)
        return obj

    def value_flat(self, z):
        th, om, u = z
        dt, gl = self.dt, self.gravity / self.length
        acc = -gl * np.sin(th) - self.damping * om + u / (self.mass * self.length ** 2)
        return np.array([th + dt * om, om + dt * acc])

    def jacobian_flat(self, z):
        th = z[0]
        dt, gl = self.dt, self.gravity / self.length
        return np.array([
            [1.0, dt, 0.0],
            [-dt * gl * np.cos(th), 1.0 - dt * self.damping, dt / (self.mass * self.length ** 2)],
        ])

    def weighted_hessian_flat(self, z, lam):
        H = np.zeros((3, 3))
        H[0, 0] = lam[1] * self.dt * self.gravity / self.length * np.sin(z[0])
        return H


@register_function("fix_first")
class FixFirst(NodeFunction):
    """Inner function with its first parent frozen to a constant state."""

    def __init__(self, inner, value):
        self.inner = inner
        self.fixed = np.asarray(value, dtype=float).reshape(-1)
        if inner.in_dims[0] != self.fixed.size:
            raise ValueError("fixed value does not match the inner function's first parent")
        super().__init__(inner.in_dims[1:], inner.out_dim)
        self._k = self.fixed.size
        self.params = {"func": inner.to_record() if inner.name else None, "value": self.fixed}

    @classmethod
    def from_params(cls, params, in_dims, out_dim):
        value = np.asarray(params["value"], dtype=float).reshape(-1)
        inner = make_function(params["func"], (value.size,) + tuple(in_dims), out_dim)
        return cls(inner, value)

    def value_flat(self, z):
        return self.inner.value_flat(np.concatenate([self.fixed, z]))

    def jacobian_flat(self, z):
        return self.inner.jacobian_flat(np.concatenate([self.fixed, z]))[:, self._k:]

    def weighted_hessian_flat(self, z, lam):
        k = self._k
        return self.inner.weighted_hessian_flat(np.concatenate([self.fixed, z]), lam)[k:, k:]


# --------------------------------------------------------------------------
# local objectives


@register_objective("quadratic")
class Quadratic(LocalObjective):
    """``0.5 (z - c)^T W (z - c)``; ``weights`` may be a scalar, a diagonal or a matrix."""

    def __init__(self, weights, target=None, in_dims=None, scope="self"):
        W = np.asarray(weights, dtype=float)
        if in_dims is None:
            in_dims = (W.shape[0] if W.ndim else 1,)
        super().__init__(in_dims, scope)
        n = self.in_dim
        if W.ndim == 0:
            W = W * np.eye(n)
        elif W.ndim == 1:
            W = np.diag(_as_vector(W, n, "weights"))
        W = _as_matrix(W, n, n, "weights")
        self.W = 0.5 * (W + W.T)
        self.target = _as_vector(target, n, "target")
        self.params = {"weights": self.W, "target": self.target}

    @classmethod
    def from_params(cls, params, in_dims, scope):
        return cls(params.get("weights", 1.0), params.get("target"), in_dims=in_dims, scope=scope)

    def value_flat(self, z):
        r = z - self.target
        return 0.5 * float(r @ self.W @ r)

    def gradient_flat(self, z):
        return self.W @ (z - self.target)

    def hessian_flat(self, z):
        return self.W.copy()


@register_objective("log_cosh")
class LogCosh(LocalObjective):
    """``sum_i w_i log(cosh(z_i - c_i))``."""

    def __init__(self, weights=1.0, target=None, in_dims=(1,), scope="self"):
        super().__init__(in_dims, scope)
        self.w = _as_vector(weights, self.in_dim, "weights", default=1.0)
        self.target = _as_vector(target, self.in_dim, "target")
        self.params = {"weights": self.w, "target": self.target}

    @classmethod
    def from_params(cls, params, in_dims, scope):
        return cls(params.get("weights", 1.0), params.get("target"), in_dims=in_dims, scope=scope)

    def value_flat(self, z):
        r = z - self.target
        # log cosh r = |r| + log1p(exp(-2|r|)) - log 2, stable for large |r|
        a = np.abs(r)
        return float(self.w @ (a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)))

    def gradient_flat(self, z):
        return self.w * np.tanh(z - self.target)

    def hessian_flat(self, z):
        t = np.tanh(z - self.target)
        return np.diag(self.w * (1.0 - t * t))


@register_objective("quartic")
class Quartic(LocalObjective):
    """``sum_i w_i (z_i - c_i)^4``."""

    def __init__(self, weights=1.0, target=None, in_dims=(1,), scope="self"):
        super().__init__(in_dims, scope)
        self.w = _as_vector(weights, self.in_dim, "weights", default=1.0)
        self.target = _as_vector(target, self.in_dim, "target")
        self.params = {"weights": self.w, "target": self.target}

    @classmethod
    def from_params(cls, params, in_dims, scope):
        return cls(params.get("weights", 1.0), params.get("target"), in_dims=in_dims, scope=scope)

    def value_flat(self, z):
        return float(self.w @ (z - self.target) ** 4)

    def gradient_flat(self, z):
        return 4.0 * self.w * (z - self.target) ** 3

    def hessian_flat(self, z):
        return np.diag(12.0 * self.w * (z - self.target) ** 2)


@register_objective("terms")
class Terms(LocalObjective):
    """Sum of sub-objectives, each reading a subset of the members.

    Parameters
    ----------
    terms : list of (LocalObjective, sequence of int)
        Each sub-objective with the member indices it reads, in order.
    """

    def __init__(self, terms, in_dims, scope="family"):
        super().__init__(in_dims, scope)
        offsets = np.concatenate([[0], np.cumsum(self.in_dims)]).astype(int)
        self.terms = []
        for obj, members in terms:
            members = [int(m) for m in members]
            idx = np.concatenate([np.arange(offsets[m], offsets[m + 1]) for m in members]) \
                if members else np.zeros(0, dtype=int)
            if obj.in_dim != idx.size:
                raise ValueError("sub-objective dims do not match its members")
            self.terms.append((obj, members, idx))
        self.params = {"terms": [{"objective": o.to_record() if o.name else None, "members": m}
                                 for o, m, _ in self.terms]}

    @classmethod
    def from_params(cls, params, in_dims, scope):
        terms = []
        for t in params.get("terms", []):
            members = [int(m) for m in t["members"]]
            terms.append((make_objective(t["objective"], [in_dims[m] for m in members]), members))
        return cls(terms, in_dims, scope)

    def value_flat(self, z):
        return float(sum(o.value_flat(z[idx]) for o, _, idx in self.terms))

    def gradient_flat(self, z):
        g = np.zeros(self.in_dim)
        for o, _, idx in self.terms:
            g[idx] += o.gradient_flat(z[idx])
        return g

    def hessian_flat(self, z):
        H = np.zeros((self.in_dim, self.in_dim))
        for o, _, idx in self.terms:
            H[np.ix_(idx, idx)] += o.hessian_flat(z[idx])
        return H


@register_objective("fix_first")
class FixFirstObjective(LocalObjective):
    """Inner objective with its first member frozen to a constant state."""

    def __init__(self, inner, value, scope="self"):
        self.inner = inner
        self.fixed = np.asarray(value, dtype=float).reshape(-1)
        if inner.in_dims[0] != self.fixed.size:
            raise ValueError("fixed value does not match the inner objective's first member")
        super().__init__(inner.in_dims[1:], scope)
        self._k = self.fixed.size
        self.params = {"objective": inner.to_record() if inner.name else None, "value": self.fixed}

    @classmethod
    def from_params(cls, params, in_dims, scope):
        value = np.asarray(params["value"], dtype=float).reshape(-1)
        inner = make_objective(params["objective"], (value.size,) + tuple(in_dims))
        return cls(inner, value, scope)

    def value_flat(self, z):
        return self.inner.value_flat(np.concatenate([self.fixed, z]))

    def gradient_flat(self, z):
        return self.inner.gradient_flat(np.concatenate([self.fixed, z]))[self._k:]

    def hessian_flat(self, z):
        k = self._k
        return self.inner.hessian_flat(np.concatenate([self.fixed, z]))[k:, k:]


# --------------------------------------------------------------------------
# finite-difference adapters


class FiniteDifferenceFunction(NodeFunction):
    """Wrap a value-only callable ``fn(z) -> array`` with central-difference derivatives."""

    def __init__(self, fn, in_dims, out_dim, step=1e-5, hessian_step=1e-4):
        super().__init__(in_dims, out_dim)
        self.fn = fn
        self.step = step
        self.hessian_step = hessian_step

    def value_flat(self, z):
        return np.asarray(self.fn(z), dtype=float).reshape(self.out_dim)

    def jacobian_flat(self, z):
        z = np.asarray(z, dtype=float)
        h = fd_step(z, self.step)
        J = np.empty((self.out_dim, z.size))
        for j in range(z.size):
            e = np.zeros_like(z)
            e[j] = h[j]
            J[:, j] = (self.value_flat(z + e) - self.value_flat(z - e)) / (2 * h[j])
        return J

    def weighted_hessian_flat(self, z, lam):
        lam = np.asarray(lam, dtype=float)
        return _fd_hessian(lambda x: float(lam @ self.value_flat(x)), np.asarray(z, float), self.hessian_step)


class FiniteDifferenceObjective(LocalObjective):
    """Wrap a value-only scalar callable with central-difference derivatives."""

    def __init__(self, fn, in_dims, scope="self", step=1e-5, hessian_step=1e-4):
        super().__init__(in_dims, scope)
        self.fn = fn
        self.step = step
        self.hessian_step = hessian_step

    def value_flat(self, z):
        return float(self.fn(z))

    def gradient_flat(self, z):
        z = np.asarray(z, dtype=float)
        h = fd_step(z, self.step)
        g = np.empty(z.size)
        for j in range(z.size):
            e = np.zeros_like(z)
            e[j] = h[j]
            g[j] = (self.value_flat(z + e) - self.value_flat(z - e)) / (2 * h[j])
        return g

    def hessian_flat(self, z):
        return _fd_hessian(self.value_flat, np.asarray(z, float), self.hessian_step)


def _fd_hessian(phi, z, scale):
    n = z.size
    h = fd_step(z, scale)
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h[i]
            ej[j] = h[j]
            H[i, j] = H[j, i] = (phi(z + ei + ej) - phi(z + ei - ej)
                                 - phi(z - ei + ej) + phi(z - ei - ej)) / (4 * h[i] * h[j])
    return H

