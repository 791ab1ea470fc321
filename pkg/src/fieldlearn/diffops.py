"""Matrices of constant-coefficient linear differential operators.

An operator polynomial maps derivative multi-indices to exact rational
coefficients, e.g. ``dx2^2 - 7/25*dx1^2``. Products of polynomials are
compositions of operators, so an :class:`OperatorMatrix` product ``A @ B`` is
the operator ``A o B`` and ``(C @ G).is_zero()`` is an exact check that every
field ``G[g]`` satisfies ``C[f] = 0``.

Coefficients are only converted to floats in :func:`apply`.
"""

from __future__ import annotations

import re
from decimal import Decimal
from fractions import Fraction
from itertools import product
from typing import Iterable, Mapping, Sequence

import numpy as np

from .autodiff import MAX_ORDER, Tape, component_index, n_components
from .errors import CapabilityError, ParseError, ShapeError

Monomial = tuple  # multi-index of derivative orders, one entry per input


def monomial_key(m: Monomial):
    """Sort key: total degree first, then ``dx1`` before ``dx2`` and so on."""
    return (sum(m), tuple(-a for a in m))


def _as_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, float):
        # go through the shortest repr so 0.28 becomes 7/25, not its binary expansion
        return Fraction(repr(c))
    return Fraction(c)


class OperatorPoly:
    """A scalar operator ``sum_alpha c_alpha d^alpha`` with rational coefficients."""

    __slots__ = ("dim", "_terms", "_hash")

    def __init__(self, dim: int, terms: Mapping[Monomial, object] | None = None):
        self.dim = dim
        clean = {}
        for m, c in (terms or {}).items():
            m = tuple(int(a) for a in m)
            if len(m) != dim or any(a < 0 for a in m):
                raise ShapeError(f"multi-index {m} invalid for input dimension {dim}")
            c = _as_fraction(c)
            if c != 0:
                clean[m] = clean.get(m, Fraction(0)) + c
        self._terms = {m: c for m, c in sorted(clean.items(), key=lambda kv: monomial_key(kv[0])) if c != 0}
        self._hash = None

    @classmethod
    def zero(cls, dim: int) -> "OperatorPoly":
        return cls(dim)

    @classmethod
    def constant(cls, dim: int, c=1) -> "OperatorPoly":
        return cls(dim, {(0,) * dim: c})

    @classmethod
    def partial(cls, dim: int, axis: int, power: int = 1, coeff=1) -> "OperatorPoly":
        m = [0] * dim
        m[axis] = power
        return cls(dim, {tuple(m): coeff})

    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        return max((sum(m) for m in self._terms), default=0)

    def _check(self, other):
        if not isinstance(other, OperatorPoly):
            other = OperatorPoly.constant(self.dim, other)
        if other.dim != self.dim:
            raise ShapeError(f"input dimensions differ: {self.dim} vs {other.dim}")
        return other

    def __add__(self, other):
        other = self._check(other)
        terms = dict(self._terms)
        for m, c in other._terms.items():
            terms[m] = terms.get(m, Fraction(0)) + c
        return OperatorPoly(self.dim, terms)

    __radd__ = __add__

    def __neg__(self):
        return OperatorPoly(self.dim, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-self._check(other))

    def __rsub__(self, other):
        return self._check(other) - self

    def __mul__(self, other):
        if not isinstance(other, OperatorPoly):
            c = _as_fraction(other)
            return OperatorPoly(self.dim, {m: v * c for m, v in self._terms.items()})
        other = self._check(other)
        terms: dict = {}
        for (m1, c1), (m2, c2) in product(self._terms.items(), other._terms.items()):
            m = tuple(a + b for a, b in zip(m1, m2))
            terms[m] = terms.get(m, Fraction(0)) + c1 * c2
        return OperatorPoly(self.dim, terms)

    def __rmul__(self, other):
        return self * other

    def __eq__(self, other):
        if isinstance(other, OperatorPoly):
            return self.dim == other.dim and self._terms == other._terms
        if isinstance(other, (int, Fraction)):
            return self == OperatorPoly.constant(self.dim, other)
        return NotImplemented

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.dim, tuple(self._terms.items())))
        return self._hash

    def scale_inputs(self, factors: Sequence) -> "OperatorPoly":
        """Same operator written in coordinates ``x' = x / s`` (``d/dx = (1/s) d/dx'``)."""
        factors = [_as_fraction(s) for s in factors]
        terms = {}
        for m, c in self._terms.items():
            for s, a in zip(factors, m):
                c = c / s ** a
            terms[m] = c
        return OperatorPoly(self.dim, terms)

    def __str__(self):
        return format_poly(self)

    def __repr__(self):
        return f"OperatorPoly({format_poly(self)!r}, dim={self.dim})"


class OperatorMatrix:
    """Immutable ``rows x cols`` grid of :class:`OperatorPoly` over ``input_dim`` inputs."""

    __slots__ = ("rows", "cols", "input_dim", "_entries")

    def __init__(self, entries: Sequence[Sequence], input_dim: int):
        grid = [list(r) for r in entries]
        if not grid or not grid[0]:
            raise ShapeError("operator matrix must have at least one row and column")
        cols = len(grid[0])
        if any(len(r) != cols for r in grid):
            raise ShapeError("ragged operator matrix")
        conv = []
        for r in grid:
            row = []
            for e in r:
                if not isinstance(e, OperatorPoly):
                    e = OperatorPoly.constant(input_dim, e)
                if e.dim != input_dim:
                    raise ShapeError(f"entry has input dimension {e.dim}, expected {input_dim}")
                row.append(e)
            conv.append(tuple(row))
        self.rows = len(conv)
        self.cols = cols
        self.input_dim = input_dim
        self._entries = tuple(conv)

    @classmethod
    def identity(cls, n: int, input_dim: int) -> "OperatorMatrix":
        return cls([[1 if i == j else 0 for j in range(n)] for i in range(n)], input_dim)

    @classmethod
    def zeros(cls, rows: int, cols: int, input_dim: int) -> "OperatorMatrix":
        return cls([[0] * cols for _ in range(rows)], input_dim)

    @property
    def shape(self):
        return self.rows, self.cols

    def __getitem__(self, ij) -> OperatorPoly:
        i, j = ij
        return self._entries[i][j]

    def entries(self) -> tuple:
        return self._entries

    def max_derivative_order(self) -> int:
        return max(e.degree() for row in self._entries for e in row)

    def is_zero(self) -> bool:
        return all(e.is_zero() for row in self._entries for e in row)

    def __matmul__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        return compose(self, other)

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        if self.shape != other.shape or self.input_dim != other.input_dim:
            raise ShapeError(f"cannot add {self.shape} and {other.shape} operator matrices")
        return OperatorMatrix([[a + b for a, b in zip(r1, r2)]
                               for r1, r2 in zip(self._entries, other._entries)], self.input_dim)

    def __mul__(self, c) -> "OperatorMatrix":
        return OperatorMatrix([[e * c for e in r] for r in self._entries], self.input_dim)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1

    def __eq__(self, other):
        if not isinstance(other, OperatorMatrix):
            return NotImplemented
        return self.input_dim == other.input_dim and self._entries == other._entries

    def __hash__(self):
        return hash((self.input_dim, self._entries))

    def column(self, j: int) -> "OperatorMatrix":
        return OperatorMatrix([[r[j]] for r in self._entries], self.input_dim)

    def scale_inputs(self, factors: Sequence) -> "OperatorMatrix":
        return OperatorMatrix([[e.scale_inputs(factors) for e in r] for r in self._entries],
                              self.input_dim)

    def __str__(self):
        return format_operator(self)

    def __repr__(self):
        return f"OperatorMatrix({format_operator(self)!r})"


def compose(A: OperatorMatrix, B: OperatorMatrix) -> OperatorMatrix:
    """The operator ``A o B`` (matrix product with polynomial entries)."""
    if A.cols != B.rows:
        raise ShapeError(f"cannot compose {A.shape} with {B.shape}")
    if A.input_dim != B.input_dim:
        raise ShapeError(f"input dimensions differ: {A.input_dim} vs {B.input_dim}")
    out = []
    for i in range(A.rows):
        row = []
        for j in range(B.cols):
            acc = OperatorPoly.zero(A.input_dim)
            for k in range(A.cols):
                acc = acc + A[i, k] * B[k, j]
            row.append(acc)
        out.append(row)
    return OperatorMatrix(out, A.input_dim)


def is_zero(A: OperatorMatrix) -> bool:
    return A.is_zero()


# --------------------------------------------------------------------------
# built-in operators
# --------------------------------------------------------------------------

def _d(dim, axis, power=1, coeff=1):
    return OperatorPoly.partial(dim, axis, power, coeff)


def grad(dim: int) -> OperatorMatrix:
    """Gradient of a scalar potential; its image is curl-free."""
    return OperatorMatrix([[_d(dim, i)] for i in range(dim)], dim)


def div(dim: int) -> OperatorMatrix:
    return OperatorMatrix([[_d(dim, i) for i in range(dim)]], dim)


def curl3d() -> OperatorMatrix:
    """Curl of a vector potential; its image is divergence-free."""
    z = OperatorPoly.zero(3)
    return OperatorMatrix([
        [z, -_d(3, 2), _d(3, 1)],
        [_d(3, 2), z, -_d(3, 0)],
        [-_d(3, 1), _d(3, 0), z],
    ], 3)


def curl_constraint3d() -> OperatorMatrix:
    """Constraint ``curl f = 0`` (the same matrix as :func:`curl3d`)."""
    return curl3d()


def rot_grad2d() -> OperatorMatrix:
    """``[d/dx2; -d/dx1]``: a divergence-free 2D field from a scalar potential."""
    return OperatorMatrix([[_d(2, 1)], [-_d(2, 0)]], 2)


def airy_strain(nu) -> OperatorMatrix:
    """Plane-stress strains ``(e_xx, e_yy, e_xy)`` from an Airy stress function."""
    nu = _as_fraction(nu)
    dxx, dyy = _d(2, 0, 2), _d(2, 1, 2)
    dxy = OperatorPoly(2, {(1, 1): 1})
    return OperatorMatrix([[dyy - dxx * nu], [dxx - dyy * nu], [dxy * -(1 + nu)]], 2)


def equilibrium_constraint(nu) -> OperatorMatrix:
    """Plane-stress equilibrium acting on ``(e_xx, e_yy, e_xy)``."""
    nu = _as_fraction(nu)
    dx, dy = _d(2, 0), _d(2, 1)
    return OperatorMatrix([
        [dx, dx * nu, dy * (1 - nu)],
        [dy * nu, dy, dx * (1 - nu)],
    ], 2)


# --------------------------------------------------------------------------
# application to differentiable fields
# --------------------------------------------------------------------------

def _multi_indices(dim: int, order: int):
    out = []
    for deg in range(order + 1):
        for m in product(range(deg + 1), repeat=dim):
            if sum(m) == deg:
                out.append(m)
    return sorted(out, key=monomial_key)


def operator_jet_map(A: OperatorMatrix, out_order: int = 0) -> np.ndarray:
    """Constant tensor taking field jets to jets of ``A[field]``.

    The input jets must have order ``A.max_derivative_order() + out_order``;
    the result has shape ``(C_in, A.cols, C_out, A.rows)`` for use with
    :meth:`Tape.contract`.
    """
    dim = A.input_dim
    in_order = A.max_derivative_order() + out_order
    if in_order > MAX_ORDER:
        raise CapabilityError(
            f"need input derivatives of order {in_order}; engine supports up to {MAX_ORDER}")
    M = np.zeros((n_components(dim, in_order), A.cols, n_components(dim, out_order), A.rows))
    for beta in _multi_indices(dim, out_order):
        co = component_index(beta)
        for i in range(A.rows):
            for j in range(A.cols):
                for alpha, c in A[i, j].items():
                    m = tuple(a + b for a, b in zip(alpha, beta))
                    M[component_index(m), j, co, i] += float(c)
    return M


class PolynomialField:
    """Vector field whose components are polynomials in the inputs.

    ``components`` is a list (one per output) of ``{exponents: coefficient}``
    maps. Derivatives are exact, which makes it a handy stand-in for a
    network when checking operator application.
    """

    def __init__(self, components: Sequence[Mapping[tuple, float]], dim: int):
        self.components = [dict(c) for c in components]
        self.dim = dim
        self.out_dim = len(self.components)

    def derivative(self, X: np.ndarray, alpha: Sequence[int]) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.zeros((X.shape[0], self.out_dim))
        for k, comp in enumerate(self.components):
            for exps, coeff in comp.items():
                if any(e < a for e, a in zip(exps, alpha)):
                    continue
                term = np.full(X.shape[0], float(coeff))
                for d, (e, a) in enumerate(zip(exps, alpha)):
                    for r in range(a):
                        term = term * (e - r)
                    term = term * X[:, d] ** (e - a)
                out[:, k] += term
        return out

    def __call__(self, X):
        return self.derivative(X, (0,) * self.dim)

    def jet(self, X: np.ndarray, order: int) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        J = np.zeros((X.shape[0], n_components(self.dim, order), self.out_dim))
        for m in _multi_indices(self.dim, order):
            J[:, component_index(m)] = self.derivative(X, m)
            if sum(m) == 2:
                # fill the mirrored Hessian slot too
                d, e = [i for i, a in enumerate(m) for _ in range(a)]
                J[:, 1 + self.dim + e * self.dim + d] = J[:, component_index(m)]
        return J


class TransformedField:
    """The field ``A[g]`` for an operator matrix ``A`` and a differentiable field ``g``."""

    def __init__(self, A: OperatorMatrix, field):
        self.op = A
        self.field = field
        self.dim = A.input_dim
        self.out_dim = A.rows

    def jet(self, X: np.ndarray, order: int) -> np.ndarray:
        M = operator_jet_map(self.op, order)
        J = self.field.jet(X, self.op.max_derivative_order() + order)
        return Tape().contract(J, M).value

    def __call__(self, X):
        return self.jet(X, 0)[:, 0]


def apply(A: OperatorMatrix, g, x) -> np.ndarray:
    """Evaluate ``A[g]`` at a point ``x`` (shape ``(D,)``) or at rows of ``x`` (``(N, D)``).

    ``g`` must provide ``jet(X, order)`` returning ``(N, C, A.cols)`` arrays;
    networks, :class:`PolynomialField` and :class:`TransformedField` all do.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != A.input_dim:
        raise ShapeError(f"point has {X.shape[1]} coordinates, operator expects {A.input_dim}")
    M = operator_jet_map(A)
    J = g.jet(X, A.max_derivative_order())
    if J.shape[2] != A.cols:
        raise ShapeError(f"field has {J.shape[2]} outputs, operator expects {A.cols}")
    out = Tape().contract(J, M).value[:, 0]
    return out[0] if single else out


# --------------------------------------------------------------------------
# text form
# --------------------------------------------------------------------------

def format_coefficient(c: Fraction) -> str:
    if c.denominator == 1:
        return str(c.numerator)
    d = c.denominator
    for p in (2, 5):
        while d % p == 0:
            d //= p
    if d == 1:
        return format(Decimal(c.numerator) / Decimal(c.denominator), "f")
    return f"{c.numerator}/{c.denominator}"


def format_poly(p: OperatorPoly) -> str:
    if p.is_zero():
        return "0"
    parts = []
    for m, c in p.items():
        factors = [f"dx{i + 1}" + (f"^{a}" if a > 1 else "") for i, a in enumerate(m) if a]
        mag = abs(c)
        if not factors:
            body = format_coefficient(mag)
        elif mag == 1:
            body = "*".join(factors)
        else:
            body = format_coefficient(mag) + "*" + "*".join(factors)
        sign = "-" if c < 0 else "+"
        if not parts:
            parts.append(body if sign == "+" else "-" + body)
        else:
            parts.append(f" {sign} {body}")
    return "".join(parts)


def format_operator(A: OperatorMatrix) -> str:
    return "[" + "; ".join(", ".join(format_poly(e) for e in row) for row in A.entries()) + "]"


_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:/\d+)?|\.\d+)|(?P<d>dx(?P<axis>\d+))|(?P<op>[-+*^(),;\[\]]))")


def _tokenize(text: str):
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character at position {pos}: {text[pos:pos + 10]!r}")
        if m.group("num"):
            out.append(("num", m.group("num")))
        elif m.group("d"):
            out.append(("d", int(m.group("axis"))))
        else:
            out.append(("op", m.group("op")))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, tokens, dim):
        self.toks = tokens
        self.i = 0
        self.dim = dim

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, op=None):
        tok = self.peek()
        if tok[0] is None or (op is not None and tok != ("op", op)):
            raise ParseError(f"expected {op!r}, found {tok[1]!r}")
        self.i += 1
        return tok

    def poly(self):
        sign = 1
        if self.peek() in (("op", "-"), ("op", "+")):
            sign = -1 if self.take()[1] == "-" else 1
        acc = self.term() * sign
        while self.peek() in (("op", "-"), ("op", "+")):
            s = -1 if self.take()[1] == "-" else 1
            acc = acc + self.term() * s
        return acc

    def term(self):
        acc = self.factor()
        while self.peek() == ("op", "*"):
            self.take("*")
            acc = acc * self.factor()
        return acc

    def exponent(self) -> int:
        if self.peek() != ("op", "^"):
            return 1
        self.take("^")
        k, p = self.take()
        if k != "num" or not p.isdigit():
            raise ParseError(f"exponent must be a non-negative integer, found {p!r}")
        return int(p)

    def factor(self):
        kind, val = self.peek()
        if kind == "num":
            self.take()
            return OperatorPoly.constant(self.dim, Fraction(val))
        if kind == "d":
            self.take()
            if not 1 <= val <= self.dim:
                raise ParseError(f"dx{val} out of range for input dimension {self.dim}")
            return OperatorPoly.partial(self.dim, val - 1, self.exponent())
        if (kind, val) == ("op", "("):
            self.take("(")
            inner = self.poly()
            self.take(")")
            out = OperatorPoly.constant(self.dim)
            for _ in range(self.exponent()):
                out = out * inner
            return out
        if (kind, val) == ("op", "-"):
            self.take()
            return -self.factor()
        raise ParseError(f"unexpected token {val!r}")


def parse_operator(text: str, input_dim: int | None = None) -> OperatorMatrix:
    """Parse ``[dx1, dx2]``-style text into an :class:`OperatorMatrix`.

    Rows are separated by ``;`` and entries by ``,``; a bare polynomial is a
    1x1 matrix. Coefficients may be integers, decimals or ``p/q`` fractions
    and are kept exact. ``input_dim`` defaults to the largest ``dxN`` seen.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise ParseError("empty operator expression")
    if input_dim is None:
        input_dim = max([v for k, v in tokens if k == "d"], default=1)
    p = _Parser(tokens, input_dim)
    bracketed = p.peek() == ("op", "[")
    if bracketed:
        p.take("[")
    rows = [[p.poly()]]
    if bracketed:
        while p.peek() in (("op", ","), ("op", ";")):
            sep = p.take()[1]
            if sep == ",":
                rows[-1].append(p.poly())
            else:
                rows.append([p.poly()])
        p.take("]")
    if p.i != len(tokens):
        raise ParseError(f"trailing input after position {p.i}: {p.peek()[1]!r}")
    if len({len(r) for r in rows}) != 1:
        raise ParseError("rows have different numbers of entries")
    return OperatorMatrix(rows, input_dim)


def operator_from_rows(rows: Iterable[Iterable[str]], input_dim: int) -> OperatorMatrix:
    return OperatorMatrix([[parse_operator(e, input_dim)[0, 0] for e in r] for r in rows], input_dim)
