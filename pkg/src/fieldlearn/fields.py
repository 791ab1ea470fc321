"""Ground-truth fields, noisy dataset synthesis and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, DomainError

Box = Sequence[tuple[float, float]]  # (low, high) per input axis

DIVFREE_DOMAIN: Box = ((0.0, 4.0), (0.0, 4.0))


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    noise_sigma: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if len(self.inputs) < 1:
            raise DataError("dataset must contain at least one observation")
        if len(self.inputs) != len(self.targets):
            raise DataError(f"{len(self.inputs)} inputs but {len(self.targets)} targets")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise DataError("dataset contains non-finite values")

    def __len__(self):
        return len(self.inputs)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.targets.shape[1]

    def subset(self, idx) -> "Dataset":
        return replace(self, inputs=self.inputs[idx], targets=self.targets[idx])

    def split(self, holdout: float, seed: int) -> tuple["Dataset", "Dataset"]:
        """Random ``(rest, held_out)`` split with ``round(holdout * N)`` held out."""
        n = len(self)
        n_out = int(round(holdout * n))
        if not 0 < n_out < n:
            raise DataError(f"cannot hold out {n_out} of {n} observations")
        perm = np.random.default_rng(seed).permutation(n)
        return self.subset(np.sort(perm[n_out:])), self.subset(np.sort(perm[:n_out]))

    def take(self, n: int, seed: int) -> tuple["Dataset", "Dataset"]:
        """Random ``(first n, remainder)`` split."""
        if not 0 < n < len(self):
            raise DataError(f"cannot take {n} of {len(self)} observations")
        perm = np.random.default_rng(seed).permutation(len(self))
        return self.subset(np.sort(perm[:n])), self.subset(np.sort(perm[n:]))


# --------------------------------------------------------------------------
# analytic fields
# --------------------------------------------------------------------------

def divfree_field(x, a: float = 0.01) -> np.ndarray:
    """The 2D test field with zero divergence; ``x`` is ``(2,)`` or ``(N, 2)``."""
    x = np.asarray(x, dtype=np.float64)
    x1, x2 = x[..., 0], x[..., 1]
    p = x1 * x2
    env = np.exp(-a * p)
    s, c = np.sin(p), np.cos(p)
    f1 = env * (a * x1 * s - x1 * c)
    f2 = env * (x2 * c - a * x2 * s)
    return np.stack([f1, f2], axis=-1)


AFFINE_COEFFS = (1.1, -0.3)


def affine_field(x, a: float = 0.01) -> np.ndarray:
    """:func:`divfree_field` plus ``(1.1 x1, -0.3 x2)``; divergence 0.8 everywhere."""
    x = np.asarray(x, dtype=np.float64)
    return divfree_field(x, a) + np.asarray(AFFINE_COEFFS) * x


@dataclass(frozen=True)
class StrainParams:
    """Cantilever beam under end load, SI units."""

    P: float = 2.0e3      # load, N
    E: float = 200.0e9    # elastic modulus, Pa
    nu: float = 0.28      # Poisson ratio
    l: float = 20.0e-3    # length, m
    h: float = 10.0e-3    # height, m
    t: float = 5.0e-3     # width, m

    def __post_init__(self):
        if min(self.P, self.E, self.l, self.h, self.t) <= 0:
            raise DomainError("beam parameters must be positive")
        if not 0 < self.nu < 0.5:
            raise DomainError(f"Poisson ratio must lie in (0, 0.5), got {self.nu}")

    @property
    def I(self) -> float:
        return self.t * self.h ** 3 / 12.0

    @property
    def domain(self) -> Box:
        return ((0.0, self.l), (-self.h / 2, self.h / 2))


def saint_venant_strain(x, y, p: StrainParams = StrainParams()) -> np.ndarray:
    """``(e_xx, e_yy, e_xy)`` of the Saint-Venant cantilever; last axis has length 3."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    tol = 1e-12
    if np.any(x < -tol) or np.any(x > p.l + tol) or np.any(np.abs(y) > p.h / 2 + tol):
        raise DomainError("point lies outside the beam")
    k = p.P / (p.E * p.I)
    exx = k * (p.l - x) * y
    eyy = -p.nu * k * (p.l - x) * y
    exy = -(1 + p.nu) * k / 2 * ((p.h / 2) ** 2 - y * y)
    return np.stack(np.broadcast_arrays(exx, eyy, exy), axis=-1)


def strain_field(p: StrainParams = StrainParams()) -> Callable[[np.ndarray], np.ndarray]:
    return lambda X: saint_venant_strain(np.asarray(X)[..., 0], np.asarray(X)[..., 1], p)


def potential_gradient_field(spec, params) -> Callable[[np.ndarray], np.ndarray]:
    """Gradient of a scalar network potential: a curl-free field."""
    from .autodiff import Tape, mlp_jet

    dim = spec.in_dim

    def field(X):
        X = np.asarray(X, dtype=np.float64)
        J = mlp_jet(Tape(), spec, params, np.atleast_2d(X), 1).value
        g = J[:, 1:1 + dim, 0]
        return g[0] if X.ndim == 1 else g

    return field


def random_curlfree_field(seed: int, dim: int = 3, hidden: Sequence[int] = (16,), scale: float = 2.0):
    """Curl-free field ``grad(g)`` for a random tanh network ``g``.

    Returns ``(field, (spec, params))``. First-layer weights are multiplied
    by ``scale`` so the field varies noticeably over the unit box.
    """
    from .network import MlpSpec, init

    spec = MlpSpec((dim, *hidden, 1), "tanh")
    params = init(spec, seed)
    w, _, _ = spec.blocks()[0]
    params[w] *= scale
    return potential_gradient_field(spec, params), (spec, params)


CURLFREE_DOMAIN: Box = ((-1.0, 1.0),) * 3


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------

def sample_dataset(field: Callable, n: int, domain: Box, sigma: float, seed: int) -> Dataset:
    """``n`` uniform points in ``domain`` with targets ``field(x) + N(0, sigma^2)``."""
    if n < 1:
        raise DomainError("need n >= 1")
    if sigma < 0:
        raise DomainError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in domain], dtype=np.float64)
    hi = np.array([b[1] for b in domain], dtype=np.float64)
    X = lo + (hi - lo) * rng.random((n, len(domain)))
    Y = np.asarray(field(X), dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if sigma > 0:
        Y = Y + sigma * rng.standard_normal(Y.shape)
    return Dataset(X, Y, sigma, seed)


def prediction_grid(domain: Box, m: int) -> np.ndarray:
    """Inclusive ``m x m (x m ...)`` grid over ``domain``; first axis varies slowest."""
    if m < 2:
        raise DomainError("grid needs m >= 2")
    axes = [np.linspace(lo, hi, m) for lo, hi in domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def save_field_csv(path, data: Dataset) -> None:
    path = Path(path)
    d, k = data.input_dim, data.output_dim
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(d)] + [f"y{i + 1}" for i in range(k)])
        for x, y in zip(data.inputs, data.targets):
            w.writerow([format(v, ".17g") for v in (*x, *y)])


def load_field_csv(path, input_dim: int | None = None) -> Dataset:
    """Read a ``x1,...,xD,y1,...,yK`` CSV; data rows are numbered from 1 in errors."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        xs = [h for h in header if h.startswith("x")]
        ys = [h for h in header if h.startswith("y")]
        d = len(xs)
        if (not xs or not ys or header != xs + ys
                or xs != [f"x{i + 1}" for i in range(d)]
                or ys != [f"y{i + 1}" for i in range(len(ys))]):
            raise DataError(f"{path}: header must be x1,...,xD,y1,...,yK, got {','.join(header)}")
        if input_dim is not None and d != input_dim:
            raise DataError(f"{path}: expected {input_dim} input columns, found {d}")
        rows = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(row)} columns, expected {len(header)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DataError(f"{path}: row {row_no} is malformed: {row}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: row {row_no} contains a non-finite value")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    return Dataset(arr[:, :d], arr[:, d:])


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    """Root mean squared error over every component of every point."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    return float(np.sqrt(np.mean(diff * diff)))
