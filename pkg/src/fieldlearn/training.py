"""Losses, ADAM, a plateau learning-rate schedule and the training loop."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Tape
from .diffops import OperatorMatrix
from .errors import ConfigError, DomainError, TrainingAborted
from .fields import Dataset
from .model import residual_jets


@dataclass
class Plateau:
    patience: int = 50
    factor: float = 0.5
    min_lr: float = 1e-5


@dataclass
class TrainConfig:
    lr: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 2000
    batch_size: int | None = None   # None: full batch up to 1000 samples, else 256
    weight_decay: float = 0.0
    penalty: float = 0.0
    constraint_points: int = 0
    penalty_kind: str = "abs"       # "abs" or "squared"
    plateau: Plateau = field(default_factory=Plateau)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.plateau, dict):
            self.plateau = Plateau(**self.plateau)

    def validate(self, constraint: OperatorMatrix | None = None) -> None:
        if self.lr <= 0 or self.epochs < 0:
            raise ConfigError("lr must be positive and epochs non-negative")
        if self.weight_decay < 0 or self.penalty < 0 or self.constraint_points < 0:
            raise ConfigError("weight_decay, penalty and constraint_points must be non-negative")
        if not 0 < self.plateau.factor < 1:
            raise ConfigError(f"plateau factor must lie in (0, 1), got {self.plateau.factor}")
        if self.penalty_kind not in ("abs", "squared"):
            raise ConfigError(f"penalty_kind must be 'abs' or 'squared', got {self.penalty_kind!r}")
        if self.penalty > 0 and (self.constraint_points == 0 or constraint is None):
            raise ConfigError("a positive penalty needs constraint points and a constraint operator")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be positive")

    def effective_batch(self, n: int) -> int:
        if self.batch_size is not None:
            return min(self.batch_size, n)
        return n if n <= 1000 else 256

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


@dataclass
class TrainReport:
    train_loss: list
    val_loss: list
    lr: list
    params: np.ndarray
    seconds: float

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_loss,lr\n")
            for i, (t, v, lr) in enumerate(zip(self.train_loss, self.val_loss, self.lr)):
                fh.write(f"{i},{t!r},{v!r},{lr!r}\n")


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------

def mse_loss(preds, targets) -> float:
    """Mean over samples of the squared error summed over output components."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise DomainError(f"shape mismatch {preds.shape} vs {targets.shape}")
    if preds.size == 0:
        raise DomainError("empty input")
    d = (targets - preds).reshape(len(preds), -1)
    return float(np.sum(d * d) / len(preds))


def penalty_term(residuals, kind: str = "abs") -> float:
    r = np.asarray(residuals, dtype=np.float64)
    return float(np.mean(np.abs(r) if kind == "abs" else r * r))


def augmented_loss(preds, targets, residuals, lam: float, kind: str = "abs") -> float:
    """MSE plus ``lam`` times the mean absolute (or squared) constraint residual."""
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    base = mse_loss(preds, targets)
    if lam == 0:
        return base
    if np.size(residuals) == 0:
        raise DomainError("a positive lambda needs constraint residuals")
    return base + lam * penalty_term(residuals, kind)


def l2_regularized_loss(base: float, params, gamma: float, weight_mask=None) -> float:
    """``base + gamma * sum(w^2)`` over weights (entries selected by ``weight_mask``)."""
    if gamma < 0:
        raise DomainError("gamma must be non-negative")
    w = np.asarray(params, dtype=np.float64)
    if weight_mask is not None:
        w = w[weight_mask]
    return base + gamma * float(np.sum(w * w))


# --------------------------------------------------------------------------
# optimiser
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected ADAM update. Returns ``(params, state)``; inputs are not modified."""
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grads
    v = beta2 * state.v + (1 - beta2) * grads * grads
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, lr: float, cfg: Plateau):
        self.lr = lr
        self.cfg = cfg
        self.best = math.inf
        self.bad = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.cfg.patience:
                self.lr = max(self.lr * self.cfg.factor, self.cfg.min_lr)
                self.bad = 0
        return self.lr


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------

def make_loss(model, X, Y, cfg: TrainConfig, constraint=None, Xc=None) -> Callable:
    """Loss ``(tape, theta) -> scalar`` on one batch, for use with the tape."""
    mask = model.weight_mask() if cfg.weight_decay > 0 else None
    n = len(X)

    def loss(tape: Tape, theta):
        F = model.jets(tape, theta, X, 0)
        diff = tape.index(F, (slice(None), 0)) - Y
        total = tape.scale(tape.sum(tape.square(diff)), 1.0 / n)
        if cfg.penalty > 0 and Xc is not None and len(Xc):
            r = residual_jets(model, tape, theta, constraint, Xc)
            r = tape.abs(r) if cfg.penalty_kind == "abs" else tape.square(r)
            total = total + tape.scale(tape.mean(r), cfg.penalty)
        if mask is not None:
            total = total + tape.scale(tape.sum(tape.square(tape.mul(theta, mask))), cfg.weight_decay)
        return total

    return loss


def _bounding_box(X: np.ndarray):
    return list(zip(X.min(axis=0), X.max(axis=0)))


def train(model, dataset: Dataset, valset: Dataset | None, config: TrainConfig,
          constraint: OperatorMatrix | None = None, constraint_domain=None):
    """Fit ``model`` to ``dataset`` with minibatch ADAM.

    Returns ``(trained_model, report)``. The learning rate follows a plateau
    schedule on the validation loss (training loss when ``valset`` is None).
    Constraint points for the penalty are drawn once, uniformly over
    ``constraint_domain`` (default: bounding box of the training inputs), and
    visited in batches aligned with the data batches.
    """
    config.validate(constraint)
    if dataset.input_dim != model.input_dim or dataset.output_dim != model.output_dim:
        raise ConfigError(f"dataset is {dataset.input_dim}->{dataset.output_dim}, model is "
                          f"{model.input_dim}->{model.output_dim}")
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    X, Y = dataset.inputs, dataset.targets
    n = len(X)
    bs = config.effective_batch(n)
    n_batches = math.ceil(n / bs)

    Xc = None
    if config.penalty > 0:
        box = constraint_domain or _bounding_box(X)
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        Xc = lo + (hi - lo) * rng.random((config.constraint_points, len(box)))
    cbs = math.ceil(len(Xc) / n_batches) if Xc is not None else 0

    theta = model.theta.copy()
    state = AdamState.zeros(theta.size)
    sched = PlateauSchedule(config.lr, config.plateau)
    lr = config.lr
    train_hist, val_hist, lr_hist = [], [], []

    for epoch in range(config.epochs):
        perm = rng.permutation(n) if n_batches > 1 else np.arange(n)
        cperm = rng.permutation(len(Xc)) if Xc is not None and n_batches > 1 else None
        epoch_loss = 0.0
        for b in range(n_batches):
            idx = perm[b * bs:(b + 1) * bs]
            xc = None
            if Xc is not None:
                cidx = cperm[b * cbs:(b + 1) * cbs] if cperm is not None else slice(None)
                xc = Xc[cidx]
            loss_fn = make_loss(model, X[idx], Y[idx], config, constraint, xc)
            tape = Tape()
            th = tape.variable(theta)
            with np.errstate(over="ignore", invalid="ignore"):
                out = loss_fn(tape, th)
            value = float(out.value)
            if not math.isfinite(value):
                raise TrainingAborted(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            grads = tape.gradient(out, th)
            theta, state = adam_step(theta, grads, state, lr, config.adam_beta1,
                                     config.adam_beta2, config.adam_eps)
            epoch_loss += value * len(idx)
        epoch_loss /= n
        if valset is not None:
            with np.errstate(over="ignore", invalid="ignore"):
                val = mse_loss(model.with_params(theta).predict(valset.inputs), valset.targets)
        else:
            val = epoch_loss
        if not math.isfinite(val):
            raise TrainingAborted(f"non-finite validation loss at epoch {epoch}")
        train_hist.append(epoch_loss)
        val_hist.append(val)
        lr_hist.append(lr)
        lr = sched.step(val)

    report = TrainReport(train_hist, val_hist, lr_hist, theta, time.perf_counter() - start)
    return model.with_params(theta), report
