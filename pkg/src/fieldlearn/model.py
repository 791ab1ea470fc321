"""Constrained and standard predictors.

A :class:`ConstrainedModel` predicts ``f = G[g] + sum_k c_k b_k(x)``, where
``g`` is a network potential, ``G`` a transform operator and the optional
affine tail uses basis fields ``b_k(x) = x_d e_i``. Any parameter vector gives
a field that satisfies every constraint ``C`` with ``C @ G == 0`` (up to the
constant contributed by the tail).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import MAX_ORDER, Tape, Var, mlp_jet, n_components
from .diffops import OperatorMatrix, format_operator, operator_jet_map, parse_operator
from .errors import CapabilityError, ConfigError, ShapeError
from .network import MlpSpec, init, validate_for_operator


def default_tail_basis(dim: int) -> tuple:
    """``b_k(x) = x_k e_k`` for ``k < dim``."""
    return tuple((k, k) for k in range(dim))


def _tail_jet(X: np.ndarray, basis, out_dim: int, order: int) -> np.ndarray:
    n, dim = X.shape
    T = np.zeros((n, n_components(dim, order), len(basis), out_dim))
    for b, (comp, axis) in enumerate(basis):
        T[:, 0, b, comp] = X[:, axis]
        if order >= 1:
            T[:, 1 + axis, b, comp] = 1.0
    return T


class _Model:
    theta: np.ndarray

    @property
    def input_dim(self) -> int:
        raise NotImplementedError

    @property
    def output_dim(self) -> int:
        raise NotImplementedError

    def n_params(self) -> int:
        return self.theta.size

    def with_params(self, theta: np.ndarray):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != self.theta.shape:
            raise ShapeError(f"expected {self.theta.size} parameters, got {theta.shape}")
        return replace(self, theta=theta.copy())

    def weight_mask(self) -> np.ndarray:
        raise NotImplementedError

    def jets(self, tape: Tape, theta, X: np.ndarray, order: int) -> Var:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = self.jets(Tape(), self.theta, np.atleast_2d(X), 0).value[:, 0]
        return out[0] if X.ndim == 1 else out

    __call__ = predict

    def jet(self, X, order: int) -> np.ndarray:
        return self.jets(Tape(), self.theta, np.atleast_2d(X), order).value


@dataclass
class StandardModel(_Model):
    spec: MlpSpec
    theta: np.ndarray

    @classmethod
    def create(cls, spec: MlpSpec, seed: int) -> "StandardModel":
        return cls(spec, init(spec, seed))

    @property
    def input_dim(self):
        return self.spec.in_dim

    @property
    def output_dim(self):
        return self.spec.out_dim

    def weight_mask(self):
        return self.spec.weight_mask()

    def jets(self, tape, theta, X, order):
        return mlp_jet(tape, self.spec, theta, X, order)


@dataclass
class ConstrainedModel(_Model):
    spec: MlpSpec
    transform: OperatorMatrix
    theta: np.ndarray
    tail_basis: tuple | None = None
    _maps: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.spec.out_dim != self.transform.cols:
            raise ShapeError(f"potential has {self.spec.out_dim} outputs, "
                             f"transform expects {self.transform.cols}")
        if self.spec.in_dim != self.transform.input_dim:
            raise ShapeError(f"potential takes {self.spec.in_dim} inputs, "
                             f"transform acts on {self.transform.input_dim}")
        reason = validate_for_operator(self.spec, self.transform)
        if reason:
            raise CapabilityError(reason)
        if self.tail_basis is not None:
            self.tail_basis = tuple(tuple(b) for b in self.tail_basis)
            for comp, axis in self.tail_basis:
                if not (0 <= comp < self.output_dim and 0 <= axis < self.input_dim):
                    raise ShapeError(f"tail basis entry {(comp, axis)} out of range")
        expected = self.spec.n_params() + self.n_tail
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (expected,):
            raise ShapeError(f"expected {expected} parameters, got {self.theta.shape}")

    @classmethod
    def create(cls, spec: MlpSpec, transform: OperatorMatrix, seed: int,
               tail_basis: Sequence | None = None) -> "ConstrainedModel":
        n_tail = len(tail_basis) if tail_basis is not None else 0
        theta = np.concatenate([init(spec, seed), np.zeros(n_tail)])
        return cls(spec, transform, theta, tail_basis)

    @property
    def input_dim(self):
        return self.spec.in_dim

    @property
    def output_dim(self):
        return self.transform.rows

    @property
    def n_tail(self) -> int:
        return len(self.tail_basis) if self.tail_basis is not None else 0

    @property
    def net_params(self) -> np.ndarray:
        return self.theta[:self.spec.n_params()]

    @property
    def tail_coeffs(self) -> np.ndarray:
        return self.theta[self.spec.n_params():]

    def with_params(self, theta):
        new = super().with_params(theta)
        new._maps = self._maps
        return new

    def weight_mask(self):
        return np.concatenate([self.spec.weight_mask(), np.zeros(self.n_tail, dtype=bool)])

    def _map(self, order):
        if order not in self._maps:
            self._maps[order] = operator_jet_map(self.transform, order)
        return self._maps[order]

    def jets(self, tape, theta, X, order):
        need = self.transform.max_derivative_order() + order
        if need > MAX_ORDER:
            raise CapabilityError(
                f"order-{order} jets of this model need potential derivatives of order {need}; "
                f"engine supports up to {MAX_ORDER}")
        theta = tape._lift(theta)
        p = self.spec.n_params()
        net = tape.take(theta, 0, p, (p,))
        f = tape.contract(mlp_jet(tape, self.spec, net, X, need), self._map(order))
        if self.n_tail:
            c = tape.take(theta, p, p + self.n_tail, (self.n_tail,))
            f = f + tape.weighted_sum(c, _tail_jet(X, self.tail_basis, self.output_dim, order))
        return f

    def tail_residual(self, C: OperatorMatrix, X) -> np.ndarray:
        """``C`` applied to the affine tail alone (the prescribed right-hand side)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if not self.n_tail:
            return np.zeros((len(X), C.rows))
        T = _tail_jet(X, self.tail_basis, self.output_dim, C.max_derivative_order())
        F = np.tensordot(T, self.tail_coeffs, axes=([2], [0]))
        return Tape().contract(F, operator_jet_map(C)).value[:, 0]


def residual_jets(model, tape: Tape, theta, C: OperatorMatrix, X: np.ndarray) -> Var:
    """Tape variable ``(N, C.rows)`` holding ``C[f]`` at the rows of ``X``."""
    if C.cols != model.output_dim or C.input_dim != model.input_dim:
        raise ShapeError(f"constraint of shape {C.shape} on {C.input_dim} inputs does not fit "
                         f"a model with {model.output_dim} outputs on {model.input_dim} inputs")
    F = model.jets(tape, theta, X, C.max_derivative_order())
    return tape.index(tape.contract(F, operator_jet_map(C)), (slice(None), 0))


def constraint_residual(model, C: OperatorMatrix, x) -> np.ndarray:
    """Value of ``C[f]`` at ``x`` (``(D,)`` or ``(N, D)``), computed from nested jets."""
    x = np.asarray(x, dtype=np.float64)
    r = residual_jets(model, Tape(), model.theta, C, np.atleast_2d(x)).value
    return r[0] if x.ndim == 1 else r


def predict(model, x) -> np.ndarray:
    return model.predict(x)


# --------------------------------------------------------------------------
# bundles
# --------------------------------------------------------------------------

def save_model(directory, model) -> None:
    """Write ``manifest.json`` and a little-endian float64 ``params.bin``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"spec": model.spec.to_json(), "count": int(model.theta.size)}
    if isinstance(model, ConstrainedModel):
        manifest.update(kind="constrained", transform=format_operator(model.transform),
                        input_dim=model.transform.input_dim,
                        affine_basis=[list(b) for b in model.tail_basis] if model.tail_basis else None)
    else:
        manifest["kind"] = "standard"
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    (directory / "params.bin").write_bytes(np.asarray(model.theta, dtype="<f8").tobytes())


def load_model(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    theta = np.frombuffer((directory / "params.bin").read_bytes(), dtype="<f8").astype(np.float64)
    if theta.size != manifest["count"]:
        raise ShapeError(f"params.bin holds {theta.size} values, manifest says {manifest['count']}")
    spec = MlpSpec.from_json(manifest["spec"])
    if manifest["kind"] == "standard":
        return StandardModel(spec, theta)
    if manifest["kind"] != "constrained":
        raise ConfigError(f"unknown model kind {manifest['kind']!r}")
    G = parse_operator(manifest["transform"], manifest["input_dim"])
    basis = manifest.get("affine_basis")
    return ConstrainedModel(spec, G, theta, tuple(tuple(b) for b in basis) if basis else None)
