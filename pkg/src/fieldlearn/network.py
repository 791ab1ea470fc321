"""Fully connected networks: architecture, parameters and evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tape, get_activation, mlp_jet
from .errors import ShapeError

ParamVector = np.ndarray  # flat float64 vector, blocks laid out by MlpSpec.blocks()


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths ``[D, hidden..., K]`` and one activation per weight layer.

    ``activations`` may be a single name, applied to every hidden layer; the
    output layer is always the identity.
    """

    widths: tuple
    activations: tuple = field(default=None)

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2:
            raise ShapeError("need at least an input and an output width")
        if any(w < 1 for w in widths):
            raise ShapeError(f"all widths must be >= 1, got {widths}")
        acts = self.activations
        n_layers = len(widths) - 1
        if acts is None:
            acts = "tanh"
        if isinstance(acts, str):
            acts = (acts,) * (n_layers - 1) + ("identity",)
        acts = tuple(acts)
        if len(acts) != n_layers:
            raise ShapeError(f"{len(acts)} activations for {n_layers} weight layers")
        if acts[-1] != "identity":
            raise ShapeError("output layer activation must be 'identity'")
        for a in acts:
            get_activation(a)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "activations", acts)

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def blocks(self) -> list[tuple[slice, tuple, slice]]:
        """``(weight slice, weight shape, bias slice)`` for each layer."""
        out, pos = [], 0
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            w = slice(pos, pos + fan_in * fan_out)
            pos = w.stop
            b = slice(pos, pos + fan_out)
            pos = b.stop
            out.append((w, (fan_out, fan_in), b))
        return out

    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))

    def weight_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_params(), dtype=bool)
        for w, _, _ in self.blocks():
            mask[w] = True
        return mask

    def unpack(self, params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params(),):
            raise ShapeError(f"expected {self.n_params()} parameters, got {params.shape}")
        return [(params[w].reshape(shape), params[b]) for w, shape, b in self.blocks()]

    def to_json(self) -> dict:
        return {"widths": list(self.widths), "activations": list(self.activations)}

    @classmethod
    def from_json(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["widths"]), tuple(d["activations"]))


def init(spec: MlpSpec, seed: int) -> ParamVector:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(spec.n_params())
    for w, (fan_out, fan_in), _ in spec.blocks():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        theta[w] = rng.uniform(-limit, limit, size=fan_out * fan_in)
    return theta


def forward(spec: MlpSpec, params: ParamVector, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != spec.in_dim:
        raise ShapeError(f"input has {h.shape[1]} coordinates, network expects {spec.in_dim}")
    for (W, b), name in zip(spec.unpack(params), spec.activations):
        h = h @ W.T
        h += b
        if name != "identity":
            h = get_activation(name).fn(h, 0)[0]
    return h[0] if single else h


def validate_for_operator(spec: MlpSpec, op) -> str | None:
    """Reason why ``spec`` cannot carry the transform ``op``, or ``None`` if it can.

    Every hidden activation needs a non-constant derivative at each order the
    operator differentiates: otherwise ``op[g]`` is piecewise constant or the
    derivative is undefined.
    """
    order = op.max_derivative_order()
    for layer, name in enumerate(spec.activations[:-1]):
        act = get_activation(name)
        if order > act.smooth_order:
            return (f"layer {layer + 1} activation {name!r} has a constant or undefined "
                    f"derivative of order {order}")
        if order > act.max_order:
            return f"layer {layer + 1} activation {name!r} cannot be differentiated {order} times"
    return None


@dataclass
class Mlp:
    """A network specification together with its parameters."""

    spec: MlpSpec
    params: ParamVector

    @classmethod
    def initialised(cls, spec: MlpSpec, seed: int) -> "Mlp":
        return cls(spec, init(spec, seed))

    @property
    def dim(self) -> int:
        return self.spec.in_dim

    @property
    def out_dim(self) -> int:
        return self.spec.out_dim

    def __call__(self, x):
        return forward(self.spec, self.params, x)

    def jet(self, X, order: int) -> np.ndarray:
        return mlp_jet(Tape(), self.spec, self.params, X, order).value


def save_params(path, spec: MlpSpec, params: ParamVector, seed: int | None = None) -> None:
    """Write ``path`` (little-endian float64 blob) and ``path.json`` header."""
    path = Path(path)
    params = np.asarray(params, dtype="<f8")
    if params.shape != (spec.n_params(),):
        raise ShapeError(f"expected {spec.n_params()} parameters, got {params.shape}")
    path.write_bytes(params.tobytes())
    header = {"widths": list(spec.widths), "activations": list(spec.activations),
              "seed": seed, "count": int(params.size)}
    Path(str(path) + ".json").write_text(json.dumps(header, indent=2))


def load_params(path) -> tuple[MlpSpec, ParamVector, int | None]:
    path = Path(path)
    header = json.loads(Path(str(path) + ".json").read_text())
    spec = MlpSpec.from_json(header)
    params = np.frombuffer(path.read_bytes(), dtype="<f8").astype(np.float64)
    if params.size != header["count"] or params.size != spec.n_params():
        raise ShapeError(f"blob holds {params.size} values, header says {header['count']}")
    return spec, params, header.get("seed")


def split_widths(total: int) -> tuple[int, int]:
    """Two hidden layers with two thirds of ``total`` neurons in the first."""
    if total % 3 != 0 or total < 3:
        raise ValueError(f"total neuron count must be a positive multiple of 3, got {total}")
    return 2 * total // 3, total // 3


def widths_for(in_dim: int, hidden: Sequence[int], out_dim: int) -> tuple:
    return (in_dim, *hidden, out_dim)
