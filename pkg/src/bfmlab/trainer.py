"""Mini-batch training with early stopping and best-validation checkpoint restore."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import DatasetFile
from .estimator import ModelSpec, ModelWeights, NonFiniteError, build_model, forward, value_and_grad
from .layers import masked_mse
from .rng import stream

log = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss; the partial record is attached."""

    def __init__(self, message: str, record: "TrainRecord"):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    optimizer: str = "adam"
    dtype: str = "float64"
    min_delta: float = 1e-7

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainRecord:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    stop_reason: str | None = None
    best_epoch: int | None = None

    @property
    def epochs(self) -> int:
        return len(self.val_loss)

    def same_trajectory(self, other: "TrainRecord") -> bool:
        """Equal losses and stop decision; wall times are ignored."""
        return (self.train_loss == other.train_loss and self.val_loss == other.val_loss
                and self.stop_reason == other.stop_reason and self.best_epoch == other.best_epoch)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
        for i, (tl, vl, s) in enumerate(zip(self.train_loss, self.val_loss, self.seconds), 1):
            w.writerow([i, repr(tl), repr(vl), f"{s:.3f}"])
        return buf.getvalue()


class EarlyStopping:
    """Stop once ``patience`` consecutive epochs fail to beat the best loss by ``min_delta``."""

    def __init__(self, patience: int, min_delta: float = 1e-7):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, loss: float) -> bool:
        """Record one epoch; True when it is the new best."""
        self.epoch += 1
        if loss < self.best - self.min_delta:
            self.best, self.best_epoch = loss, self.epoch
            return True
        return False

    @property
    def should_stop(self) -> bool:
        return self.epoch - self.best_epoch >= self.patience


@dataclass
class OptimizerState:
    kind: str
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_optimizer(kind: str, weights: ModelWeights) -> OptimizerState:
    state = OptimizerState(kind)
    if kind == "adam":
        state.m = {k: np.zeros_like(p) for k, p in weights.params.items()}
        state.v = {k: np.zeros_like(p) for k, p in weights.params.items()}
    return state


def update_step(weights: ModelWeights, grads: dict[str, np.ndarray], state: OptimizerState,
                lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Apply one optimizer step in place and return ``(weights, state)``."""
    if set(grads) != set(weights.params):
        missing = set(weights.params) ^ set(grads)
        raise KeyError(f"gradient keys do not match parameters: {sorted(missing)[:5]}")
    state.step += 1
    if state.kind == "sgd":
        for k, g in grads.items():
            weights.params[k] -= lr * g
        return weights, state
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, g in grads.items():
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        weights.params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return weights, state


def evaluate_loss(weights: ModelWeights, spec: ModelSpec, x, y, m, batch_size: int = 256) -> float:
    """Infer-mode masked MSE over a whole split."""
    total, count = 0.0, 0
    for i in range(0, len(x), batch_size):
        pred, _ = forward(weights, spec, x[i:i + batch_size], "infer")
        mb = m[i:i + batch_size]
        n = int(mb.sum()) * pred.shape[2]
        total += masked_mse(pred, y[i:i + batch_size].astype(pred.dtype, copy=False), mb)[0] * n
        count += n
    return total / count


def train(dataset: DatasetFile, spec: ModelSpec, config: TrainConfig,
          init: ModelWeights | None = None) -> tuple[ModelWeights, TrainRecord]:
    dtype = np.dtype(config.dtype)
    xt, yt, mt = (a.astype(dtype) if a.dtype.kind == "f" else a for a in dataset.split("train"))
    xv, yv, mv = (a.astype(dtype) if a.dtype.kind == "f" else a for a in dataset.split("val"))
    if len(xt) == 0 or len(xv) == 0:
        raise ValueError("dataset needs non-empty train and validation splits")

    weights = init.astype(dtype) if init is not None else build_model(spec, stream(config.seed, "init"), dtype)
    state = init_optimizer(config.optimizer, weights)
    stopper = EarlyStopping(config.patience, config.min_delta)
    record = TrainRecord()
    best = weights.copy()

    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        order = stream(config.seed, "shuffle", epoch).permutation(len(xt))
        seen, acc = 0, 0.0
        for bi, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            if not mt[idx].any():
                continue
            try:
                value, grads = value_and_grad(weights, spec, xt[idx], yt[idx], mt[idx],
                                              stream(config.seed, "dropout", epoch, bi))
            except NonFiniteError as exc:
                record.stop_reason = "diverged"
                raise DivergenceError(f"epoch {epoch + 1}: {exc}", record) from exc
            if not np.isfinite(value):
                record.stop_reason = "diverged"
                raise DivergenceError(f"non-finite training loss at epoch {epoch + 1}", record)
            update_step(weights, grads, state, config.learning_rate)
            acc += value * len(idx)
            seen += len(idx)
        try:
            val = evaluate_loss(weights, spec, xv, yv, mv)
        except NonFiniteError as exc:
            val = np.nan
            log.warning("validation: %s", exc)
        if not np.isfinite(val):
            record.stop_reason = "diverged"
            raise DivergenceError(f"non-finite validation loss at epoch {epoch + 1}", record)
        record.train_loss.append(acc / max(seen, 1))
        record.val_loss.append(val)
        record.seconds.append(time.perf_counter() - t0)
        if stopper.update(val):
            best = weights.copy()
            record.best_epoch = stopper.epoch
        log.info("epoch %d train %.6g val %.6g (%.1fs)", epoch + 1, record.train_loss[-1], val,
                 record.seconds[-1])
        if stopper.should_stop:
            record.stop_reason = "early_stop"
            break
    else:
        record.stop_reason = "max_epochs"
    return best, record
