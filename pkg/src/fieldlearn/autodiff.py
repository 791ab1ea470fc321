"""Input-derivative jets and a reverse-mode tape over them.

Input derivatives (up to second order) are carried forward as truncated
jets. A batch of jets for ``N`` points, ``K`` channels and ``D`` inputs is an
array of shape ``(N, C, K)`` whose component axis holds, in order,

* the value,
* the ``D`` first derivatives ``d/dx_d`` (order >= 1),
* the ``D*D`` second derivatives ``d2/dx_d dx_e`` in row-major order (order 2).

Parameter gradients come from a reverse pass over a :class:`Tape` whose node
values are such jet arrays, so losses that contain input derivatives of a
network can be differentiated with respect to its weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import CapabilityError, ShapeError

MAX_ORDER = 2


# --------------------------------------------------------------------------
# component layout
# --------------------------------------------------------------------------

def n_components(dim: int, order: int) -> int:
    if order < 0 or order > MAX_ORDER:
        raise CapabilityError(f"jet order {order} not supported (max {MAX_ORDER})")
    return (1, 1 + dim, 1 + dim + dim * dim)[order]


def component_index(alpha: Sequence[int]) -> int:
    """Slot of the partial derivative with multi-index ``alpha``.

    Second derivatives are read from the upper-triangular slot ``(d, e)``
    with ``d <= e``.
    """
    dim = len(alpha)
    degree = sum(alpha)
    if degree == 0:
        return 0
    if degree > MAX_ORDER:
        raise CapabilityError(f"derivative of order {degree} exceeds engine limit {MAX_ORDER}")
    axes = [d for d, a in enumerate(alpha) for _ in range(a)]
    if degree == 1:
        return 1 + axes[0]
    d, e = axes
    return 1 + dim + d * dim + e


def seed_jet(X: np.ndarray, order: int) -> np.ndarray:
    """Jet of the coordinate functions themselves at the rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, dim = X.shape
    J = np.zeros((n, n_components(dim, order), dim))
    J[:, 0, :] = X
    if order >= 1:
        J[:, 1:1 + dim, :] = np.eye(dim)
    return J


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------

# Each activation returns its value and first ``n`` derivatives (n <= 3).

def _tanh(z, n):
    t = np.tanh(z)
    out = [t]
    if n >= 1:
        d1 = 1.0 - t * t
        out.append(d1)
    if n >= 2:
        out.append(-2.0 * t * d1)
    if n >= 3:
        out.append(d1 * (6.0 * t * t - 2.0))
    return tuple(out)


def _sigmoid(z, n):
    s = 0.5 * (1.0 + np.tanh(0.5 * z))
    if n == 0:
        return (s,)
    d1 = s * (1.0 - s)
    d2 = d1 * (1.0 - 2.0 * s)
    d3 = d2 * (1.0 - 2.0 * s) - 2.0 * d1 * d1
    return (s, d1, d2, d3)[:n + 1]


def _sin(z, n):
    s = np.sin(z)
    if n == 0:
        return (s,)
    c = np.cos(z)
    return (s, c, -s, -c)[:n + 1]


def _exp(z, n):
    e = np.exp(z)
    return (e,) * (n + 1)


def _identity(z, n):
    one = np.ones_like(z)
    zero = np.zeros_like(z)
    return (z, one, zero, zero)[:n + 1]


def _relu(z, n):
    r = np.maximum(z, 0.0)
    if n == 0:
        return (r,)
    zero = np.zeros_like(z)
    return (r, (z > 0).astype(z.dtype), zero, zero)[:n + 1]


@dataclass(frozen=True)
class Activation:
    name: str
    fn: Callable
    # highest input-derivative order the engine will propagate through it
    max_order: int
    # highest order at which its derivative is non-constant (smoothness for modelling)
    smooth_order: int


ACTIVATIONS = {
    "tanh": Activation("tanh", _tanh, 2, 2),
    "sigmoid": Activation("sigmoid", _sigmoid, 2, 2),
    "sin": Activation("sin", _sin, 2, 2),
    "exp": Activation("exp", _exp, 2, 2),
    "relu": Activation("relu", _relu, 1, 0),
    "identity": Activation("identity", _identity, 2, 2),
}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def _jet_order(J: np.ndarray, dim: int) -> int:
    c = J.shape[1]
    for order in range(MAX_ORDER + 1):
        if n_components(dim, order) == c:
            return order
    raise ShapeError(f"{c} jet components do not match input dimension {dim}")


def _activation_forward(J, dim, order, derivs):
    n, _, w = J.shape
    out = np.empty_like(J)
    out[:, 0] = derivs[0]
    if order >= 1:
        g = J[:, 1:1 + dim]
        out[:, 1:1 + dim] = derivs[1][:, None, :] * g
    if order == 2:
        h = J[:, 1 + dim:]
        gg = (g[:, :, None, :] * g[:, None, :, :]).reshape(n, dim * dim, w)
        out[:, 1 + dim:] = derivs[2][:, None, :] * gg + derivs[1][:, None, :] * h
    return out


def _activation_backward(G, J, dim, order, derivs):
    n, _, w = J.shape
    Z = np.empty_like(J)
    zv = derivs[1] * G[:, 0]
    if order >= 1:
        g = J[:, 1:1 + dim]
        gbar = G[:, 1:1 + dim]
        zv = zv + derivs[2] * np.einsum("ndw,ndw->nw", gbar, g)
        Zg = derivs[1][:, None, :] * gbar
    if order == 2:
        h = J[:, 1 + dim:]
        hbar = G[:, 1 + dim:]
        gg = (g[:, :, None, :] * g[:, None, :, :]).reshape(n, dim * dim, w)
        zv = zv + derivs[3] * np.einsum("ncw,ncw->nw", hbar, gg)
        zv = zv + derivs[2] * np.einsum("ncw,ncw->nw", hbar, h)
        hb = hbar.reshape(n, dim, dim, w)
        sym = hb + hb.transpose(0, 2, 1, 3)
        Zg = Zg + derivs[2][:, None, :] * np.einsum("ndew,new->ndw", sym, g)
        Z[:, 1 + dim:] = derivs[1][:, None, :] * hbar
    Z[:, 0] = zv
    if order >= 1:
        Z[:, 1:1 + dim] = Zg
    return Z


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Var:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("value", "tape", "index")

    def __init__(self, value, tape: "Tape", index: int | None):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return np.shape(self.value)

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.add(self, self.tape.scale(other, -1.0))

    def __rsub__(self, other):
        return self.tape.add(self.tape.scale(self, -1.0), other)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.scale(self, -1.0)

    def __repr__(self):
        return f"Var(shape={self.shape}, index={self.index})"


class Tape:
    """Append-only record of array operations for reverse-mode differentiation.

    A node is recorded only when one of its inputs depends on a variable
    created with :meth:`variable`; everything else is evaluated eagerly as a
    constant. Call :meth:`clear` (or use a fresh tape) between optimisation
    steps.
    """

    def __init__(self):
        self._vjps: list[tuple[tuple[int, ...], Callable] | None] = []

    def __len__(self):
        return len(self._vjps)

    def clear(self):
        self._vjps.clear()

    # -- node creation ----------------------------------------------------

    def variable(self, value) -> Var:
        self._vjps.append(None)
        return Var(np.asarray(value, dtype=np.float64), self, len(self._vjps) - 1)

    def constant(self, value) -> Var:
        return Var(np.asarray(value, dtype=np.float64), self, None)

    def _lift(self, x) -> Var:
        return x if isinstance(x, Var) else self.constant(x)

    def _record(self, value, parents: Sequence[Var], vjp: Callable) -> Var:
        live = tuple(p.index for p in parents)
        if all(i is None for i in live):
            return Var(value, self, None)
        self._vjps.append((live, vjp))
        return Var(value, self, len(self._vjps) - 1)

    # -- generic ops ------------------------------------------------------

    def add(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        sa, sb = a.shape, b.shape
        return self._record(a.value + b.value, (a, b),
                            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def mul(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        va, vb = a.value, b.value
        return self._record(va * vb, (a, b),
                            lambda g: (_unbroadcast(g * vb, np.shape(va)),
                                       _unbroadcast(g * va, np.shape(vb))))

    def scale(self, a, c: float) -> Var:
        a = self._lift(a)
        return self._record(a.value * c, (a,), lambda g: (g * c,))

    def square(self, a) -> Var:
        a = self._lift(a)
        v = a.value
        return self._record(v * v, (a,), lambda g: (2.0 * v * g,))

    def abs(self, a) -> Var:
        a = self._lift(a)
        v = a.value
        return self._record(np.abs(v), (a,), lambda g: (np.sign(v) * g,))

    def sum(self, a) -> Var:
        a = self._lift(a)
        shape = a.shape
        return self._record(np.sum(a.value), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))

    def mean(self, a) -> Var:
        a = self._lift(a)
        shape = a.shape
        n = max(int(np.prod(shape)), 1)
        return self._record(np.mean(a.value), (a,),
                            lambda g: (np.full(shape, g / n),))

    def take(self, a, start: int, stop: int, shape: tuple) -> Var:
        """Reshaped view of ``a[start:stop]`` for a flat ``a``."""
        a = self._lift(a)
        size = a.shape[0]

        def vjp(g):
            full = np.zeros(size)
            full[start:stop] = g.ravel()
            return (full,)

        return self._record(a.value[start:stop].reshape(shape), (a,), vjp)

    def index(self, a, key) -> Var:
        a = self._lift(a)
        shape = a.shape

        def vjp(g):
            full = np.zeros(shape)
            full[key] = g
            return (full,)

        return self._record(a.value[key], (a,), vjp)

    def concat(self, parts: Sequence, axis: int = -1) -> Var:
        parts = [self._lift(p) for p in parts]
        sizes = [p.shape[axis] for p in parts]
        cuts = np.cumsum(sizes)[:-1]
        return self._record(np.concatenate([p.value for p in parts], axis=axis), parts,
                            lambda g: tuple(np.split(g, cuts, axis=axis)))

    # -- jet ops ----------------------------------------------------------

    def jet_affine(self, J, W, b) -> Var:
        """Apply ``z -> W z + b`` to every jet component (bias enters the value only)."""
        J, W, b = self._lift(J), self._lift(W), self._lift(b)
        n, c, w_in = J.shape
        Jv, Wv = J.value, W.value
        out = (Jv.reshape(n * c, w_in) @ Wv.T).reshape(n, c, Wv.shape[0])
        out[:, 0] += b.value

        def vjp(G):
            G2 = G.reshape(n * c, -1)
            return ((G2 @ Wv).reshape(n, c, w_in),
                    G2.T @ Jv.reshape(n * c, w_in),
                    G[:, 0].sum(axis=0))

        return self._record(out, (J, W, b), vjp)

    def jet_activation(self, J, name: str, dim: int) -> Var:
        J = self._lift(J)
        act = get_activation(name)
        order = _jet_order(J.value, dim)
        if order > act.max_order:
            raise CapabilityError(
                f"activation {name!r} supports input derivatives up to order {act.max_order}, "
                f"requested {order}")
        Jv = J.value
        # the reverse pass needs one derivative beyond the jet order
        derivs = act.fn(Jv[:, 0], order + 1)
        out = _activation_forward(Jv, dim, order, derivs)
        return self._record(out, (J,), lambda G: (_activation_backward(G, Jv, dim, order, derivs),))

    def contract(self, J, M: np.ndarray) -> Var:
        """``out[n, o, r] = sum_{c, k} J[n, c, k] M[c, k, o, r]`` for a constant ``M``."""
        J = self._lift(J)
        n, c, k = J.shape
        co, r = M.shape[2], M.shape[3]
        M2 = M.reshape(c * k, co * r)
        out = (J.value.reshape(n, c * k) @ M2).reshape(n, co, r)
        return self._record(out, (J,), lambda G: ((G.reshape(n, co * r) @ M2.T).reshape(n, c, k),))

    def weighted_sum(self, coeffs, T: np.ndarray) -> Var:
        """``out[..., k] = sum_b coeffs[b] T[..., b, k]`` for a constant ``T``."""
        coeffs = self._lift(coeffs)
        out = np.tensordot(T, coeffs.value, axes=([T.ndim - 2], [0]))
        lead = "pqrstu"[:T.ndim - 2]
        spec = f"{lead}bk,{lead}k->b"
        return self._record(out, (coeffs,), lambda G: (np.einsum(spec, T, G),))

    # -- reverse pass -----------------------------------------------------

    def gradient(self, out: Var, wrt: Var | Sequence[Var]):
        """Gradient of the scalar ``out`` with respect to ``wrt``."""
        single = isinstance(wrt, Var)
        targets = [wrt] if single else list(wrt)
        if out.index is None:
            grads = [np.zeros(np.shape(t.value)) for t in targets]
            return grads[0] if single else grads
        adj: dict[int, np.ndarray] = {out.index: np.ones_like(out.value)}
        for i in range(out.index, -1, -1):
            g = adj.get(i)
            entry = self._vjps[i]
            if g is None or entry is None:
                continue
            parents, vjp = entry
            for p, pg in zip(parents, vjp(g)):
                if p is None:
                    continue
                if p in adj:
                    adj[p] = adj[p] + pg
                else:
                    adj[p] = pg
        grads = [np.asarray(adj.get(t.index, np.zeros(np.shape(t.value))), dtype=np.float64)
                 for t in targets]
        return grads[0] if single else grads


# --------------------------------------------------------------------------
# networks
# --------------------------------------------------------------------------

def mlp_jet(tape: Tape, spec, theta, X: np.ndarray, order: int) -> Var:
    """Jets ``(N, C, K)`` of a fully connected network at the rows of ``X``.

    ``spec`` is any object with ``widths``, ``activations`` and ``blocks()``
    (see :class:`fieldlearn.network.MlpSpec`); ``theta`` is the flat
    parameter vector or a tape variable holding it.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    dim = spec.widths[0]
    if X.shape[1] != dim:
        raise ShapeError(f"input has {X.shape[1]} coordinates, network expects {dim}")
    for name in spec.activations:
        act = get_activation(name)
        if order > act.max_order:
            raise CapabilityError(
                f"activation {name!r} supports input derivatives up to order {act.max_order}, "
                f"requested {order}")
    theta = tape._lift(theta)
    J = tape.constant(seed_jet(X, order))
    for (w_sl, w_shape, b_sl), name in zip(spec.blocks(), spec.activations):
        W = tape.take(theta, w_sl.start, w_sl.stop, w_shape)
        b = tape.take(theta, b_sl.start, b_sl.stop, (b_sl.stop - b_sl.start,))
        J = tape.jet_affine(J, W, b)
        if name != "identity":
            J = tape.jet_activation(J, name, dim)
    return J


@dataclass
class Jet2:
    """Value, gradient and Hessian of a scalar function at one point.

    Supports forward-mode arithmetic, so ``Jet2.variables(x)`` can be pushed
    through ordinary formulas built from ``+``, ``-``, ``*`` and the
    elementary functions in this module.
    """

    value: float
    grad: np.ndarray
    hess: np.ndarray

    @classmethod
    def variables(cls, x: Sequence[float]) -> list["Jet2"]:
        x = np.asarray(x, dtype=np.float64)
        dim = x.size
        return [cls(float(x[i]), np.eye(dim)[i], np.zeros((dim, dim))) for i in range(dim)]

    @classmethod
    def const(cls, c: float, dim: int) -> "Jet2":
        return cls(float(c), np.zeros(dim), np.zeros((dim, dim)))

    def _coerce(self, other):
        if isinstance(other, Jet2):
            return other
        return Jet2.const(other, self.grad.size)

    def __add__(self, other):
        o = self._coerce(other)
        return Jet2(self.value + o.value, self.grad + o.grad, self.hess + o.hess)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.value, -self.grad, -self.hess)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        if not isinstance(other, Jet2):
            c = float(other)
            return Jet2(self.value * c, self.grad * c, self.hess * c)
        cross = np.outer(self.grad, other.grad)
        return Jet2(self.value * other.value,
                    self.grad * other.value + self.value * other.grad,
                    self.hess * other.value + self.value * other.hess + cross + cross.T)

    __rmul__ = __mul__

    def __truediv__(self, c: float):
        return self * (1.0 / float(c))

    def chain(self, f0: float, f1: float, f2: float) -> "Jet2":
        """Compose with a scalar function whose derivatives at ``value`` are given."""
        return Jet2(f0, f1 * self.grad, f2 * np.outer(self.grad, self.grad) + f1 * self.hess)


def _elementary(name):
    act = ACTIVATIONS[name]

    def fn(x):
        if isinstance(x, Jet2):
            d = act.fn(np.array(x.value), 2)
            return x.chain(float(d[0]), float(d[1]), float(d[2]))
        return act.fn(np.asarray(x, dtype=np.float64), 0)[0]

    fn.__name__ = name
    return fn


tanh = _elementary("tanh")
sigmoid = _elementary("sigmoid")
sin = _elementary("sin")
exp = _elementary("exp")


def cos(x):
    if isinstance(x, Jet2):
        c, s = np.cos(x.value), np.sin(x.value)
        return x.chain(float(c), float(-s), float(-c))
    return np.cos(x)


def jets_to_jet2(J: np.ndarray, dim: int) -> list[Jet2]:
    """Split one point's ``(C, K)`` jet block into ``K`` :class:`Jet2` values.

    The Hessian is mirrored from its upper triangle so it is exactly symmetric.
    """
    order = _jet_order(J[None], dim)
    out = []
    for k in range(J.shape[1]):
        grad = J[1:1 + dim, k].copy() if order >= 1 else np.zeros(dim)
        hess = np.zeros((dim, dim))
        if order == 2:
            full = J[1 + dim:, k].reshape(dim, dim)
            upper = np.triu(full)
            hess = upper + np.triu(full, 1).T
        out.append(Jet2(float(J[0, k]), grad, hess))
    return out


def eval_jet(spec, params: np.ndarray, x: Sequence[float], order: int) -> list[Jet2]:
    """Network outputs at ``x`` with their input derivatives up to ``order``."""
    if order > MAX_ORDER or order < 0:
        raise CapabilityError(f"jet order {order} not supported (max {MAX_ORDER})")
    J = mlp_jet(Tape(), spec, params, np.asarray(x, dtype=np.float64)[None], order).value
    return jets_to_jet2(J[0], spec.widths[0])


def value_and_gradient(loss: Callable[[Tape, Var], Var], params: np.ndarray):
    """Evaluate ``loss(tape, theta)`` and its gradient with respect to ``theta``."""
    tape = Tape()
    theta = tape.variable(np.asarray(params, dtype=np.float64))
    out = loss(tape, theta)
    if np.ndim(out.value) != 0:
        raise ShapeError("loss must be a scalar")
    return float(out.value), tape.gradient(out, theta)


def loss_gradient(loss: Callable[[Tape, Var], Var], params: np.ndarray) -> np.ndarray:
    return value_and_gradient(loss, params)[1]
