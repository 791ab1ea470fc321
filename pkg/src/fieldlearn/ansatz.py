"""Construct a transform ``G`` with ``C @ G == 0`` from an ansatz ``G = Gamma xi``.

``xi`` is a vector of candidate derivative monomials. Expanding ``C @ (Gamma xi)``
and requiring every resulting monomial coefficient to vanish gives a
homogeneous rational linear system in the entries of ``Gamma``; each
nullspace vector is a valid column of ``G``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Sequence

from .diffops import Monomial, OperatorMatrix, OperatorPoly, compose, monomial_key


@dataclass(frozen=True)
class AnsatzBasis:
    monomials: tuple
    potential_dim: int
    max_degree: int

    @property
    def input_dim(self) -> int:
        return len(self.monomials[0])

    @classmethod
    def custom(cls, monomials: Sequence[Monomial], potential_dim: int = 1) -> "AnsatzBasis":
        mons = sorted({tuple(m) for m in monomials}, key=monomial_key)
        if len({len(m) for m in mons}) != 1:
            raise ValueError("all monomials must have the same length")
        return cls(tuple(mons), potential_dim, max(sum(m) for m in mons))


def build_basis(input_dim: int, max_degree: int, potential_dim: int = 1) -> AnsatzBasis:
    if max_degree < 0 or potential_dim < 1:
        raise ValueError("need max_degree >= 0 and potential_dim >= 1")
    mons = [m for m in product(range(max_degree + 1), repeat=input_dim) if sum(m) <= max_degree]
    return AnsatzBasis(tuple(sorted(mons, key=monomial_key)), potential_dim, max_degree)


@dataclass(frozen=True)
class CoefficientSystem:
    """``matrix @ gamma = 0`` with ``gamma`` labelled by ``(row of G, monomial)``."""

    matrix: tuple          # rows of Fractions
    unknowns: tuple        # (row index of G, monomial) per column
    equations: tuple       # (row index of C @ G, result monomial) per row

    @property
    def n_unknowns(self) -> int:
        return len(self.unknowns)


def coefficient_system(C: OperatorMatrix, basis: AnsatzBasis) -> CoefficientSystem:
    """Coefficient-matching equations for one column of ``G``."""
    if C.input_dim != basis.input_dim:
        raise ValueError(f"operator acts on {C.input_dim} inputs, basis on {basis.input_dim}")
    unknowns = tuple((j, m) for j in range(C.cols) for m in basis.monomials)
    coeffs: dict = {}
    for col, (j, m) in enumerate(unknowns):
        xi = OperatorPoly(C.input_dim, {m: 1})
        for i in range(C.rows):
            for mu, c in (C[i, j] * xi).items():
                coeffs.setdefault((i, mu), {})
                coeffs[(i, mu)][col] = coeffs[(i, mu)].get(col, Fraction(0)) + c
    equations = sorted((k for k, row in coeffs.items() if any(v != 0 for v in row.values())),
                       key=lambda k: (k[0], monomial_key(k[1])))
    matrix = tuple(tuple(coeffs[k].get(col, Fraction(0)) for col in range(len(unknowns)))
                   for k in equations)
    return CoefficientSystem(matrix, unknowns, tuple(equations))


def _integer_rows(rows) -> list[list[int]]:
    out = []
    for r in rows:
        r = [Fraction(v) for v in r]
        scale = math.lcm(*(v.denominator for v in r)) if r else 1
        out.append([int(v * scale) for v in r])
    return out


def _primitive(row: list[int]) -> list[int]:
    g = math.gcd(*row)
    return [v // g for v in row] if g > 1 else row


def echelon(rows, n_cols: int) -> tuple[list[list[int]], list[int]]:
    """Fraction-free row echelon form over the integers and its pivot columns."""
    M = [_primitive(r) for r in _integer_rows(rows)]
    pivots = []
    r = 0
    for c in range(n_cols):
        pr = next((i for i in range(r, len(M)) if M[i][c] != 0), None)
        if pr is None:
            continue
        M[r], M[pr] = M[pr], M[r]
        p = M[r][c]
        for i in range(r + 1, len(M)):
            a = M[i][c]
            if a:
                M[i] = _primitive([p * x - a * y for x, y in zip(M[i], M[r])])
        pivots.append(c)
        r += 1
        if r == len(M):
            break
    return M[:r], pivots


def rational_nullspace(system) -> list[list[Fraction]]:
    """Nullspace basis of a :class:`CoefficientSystem` (or a plain rational matrix).

    One vector per free column, in column order, each with its free entry
    set to 1 and scaled to coprime integers.
    """
    if isinstance(system, CoefficientSystem):
        rows, n = system.matrix, system.n_unknowns
    else:
        rows = [list(r) for r in system]
        n = len(rows[0]) if rows else 0
    E, pivots = echelon(rows, n)
    free = [c for c in range(n) if c not in pivots]
    basis = []
    for f in free:
        x = [Fraction(0)] * n
        x[f] = Fraction(1)
        for row, pc in reversed(list(zip(E, pivots))):
            s = sum((row[j] * x[j] for j in range(pc + 1, n)), Fraction(0))
            x[pc] = -s / row[pc]
        scale = math.lcm(*(v.denominator for v in x))
        ints = _primitive([int(v * scale) for v in x])
        basis.append([Fraction(v) for v in ints])
    return basis


def _column(vec, unknowns, rows: int, dim: int) -> list[OperatorPoly]:
    col = [dict() for _ in range(rows)]
    for v, (j, m) in zip(vec, unknowns):
        if v != 0:
            col[j][m] = v
    return [OperatorPoly(dim, t) for t in col]


def _normalise(col: list[OperatorPoly]) -> list[OperatorPoly]:
    for e in col:
        for _, c in e.items():
            return [x * (1 / c) for x in col]
    return col


def find_transformation(C: OperatorMatrix, max_degree: int, potential_dim: int = 1,
                        basis: AnsatzBasis | None = None) -> OperatorMatrix | None:
    """One attempt at a transform with ``potential_dim`` columns, or ``None``.

    Column ``p`` of ``G`` is the ``p``-th nullspace vector; each column is
    scaled so its first nonzero coefficient is +1. Returns ``None`` when the
    nullspace has fewer than ``potential_dim`` independent directions.
    """
    if max_degree < 0:
        raise ValueError("max_degree must be >= 0")
    basis = basis or build_basis(C.input_dim, max_degree, potential_dim)
    system = coefficient_system(C, basis)
    null = rational_nullspace(system)
    if len(null) < potential_dim or not null:
        return None
    cols = [_normalise(_column(v, system.unknowns, C.cols, C.input_dim))
            for v in null[:potential_dim]]
    G = OperatorMatrix([[cols[p][j] for p in range(potential_dim)] for j in range(C.cols)],
                       C.input_dim)
    if not compose(C, G).is_zero():
        raise AssertionError("nullspace vector does not annihilate the constraint")
    return G


def search_transformation(C: OperatorMatrix, max_degree: int, potential_dim: int = 1,
                          grow_dim: bool = False):
    """Try degrees ``0..max_degree`` (and, with ``grow_dim``, potential sizes ``1..potential_dim``).

    Returns ``(G, degree, dim)`` for the first success or ``None``.
    """
    dims = range(1, potential_dim + 1) if grow_dim else [potential_dim]
    for p in dims:
        for d in range(max_degree + 1):
            G = find_transformation(C, d, p)
            if G is not None:
                return G, d, p
    return None
