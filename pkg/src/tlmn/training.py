"""Log-cosh objective, Adam with reduce-on-plateau, and the training loop."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ShapeError, TrainingError
from .features import NormStats, WindowSet
from .network import ModelConfig, ModelState, backward, forward_arrays, init_state, predict
from .timeutil import isoformat

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
LR_FLOOR = 1e-6
MIN_IMPROVEMENT = 1e-6


def log_cosh_loss(y, y_hat):
    """Mean log(cosh(y - y_hat)) and its gradient with respect to ``y_hat``.

    Evaluated as |r| + log1p(exp(-2|r|)) - log 2, which never overflows.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape:
        raise ShapeError(f"length mismatch: {y.size} targets vs {y_hat.size} predictions")
    if y.size == 0:
        raise ShapeError("log-cosh loss needs at least one sample")
    n = y.size
    r = y - y_hat
    a = np.abs(r)
    loss = float(np.sum(a + np.log1p(np.exp(-2.0 * a)) - LN2) / n)
    return loss, -np.tanh(r) / n


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 200
    patience_decay: int = 5
    patience_stop: int = 15
    lr_decay_factor: float = 0.5
    seed: int = 0
    validation_fraction: float = 0.15
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise ConfigError("lr_decay_factor must lie in (0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("learning_rate, batch_size and max_epochs must be positive")
        if self.patience_decay < 1 or self.patience_stop < 1:
            raise ConfigError("patience values must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    lr: float
    step: int = 0
    best_val: float = math.inf
    plateau_epochs: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], lr: float) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()}, lr)


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], opt: OptimizerState, config: TrainConfig):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if name not in params:
            continue
        if g.shape != params[name].shape or opt.m[name].shape != g.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter tensor {name!r}")
    opt.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**opt.step
    c2 = 1.0 - b2**opt.step
    for name, p in params.items():
        g = grads[name]
        m = opt.m[name]
        v = opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params, opt


def lr_schedule(opt: OptimizerState, val_history: list[float], config: TrainConfig) -> float:
    """Reduce-on-plateau: call once per epoch after appending the newest validation loss."""
    if not val_history:
        raise DataError("validation history is empty")
    latest = val_history[-1]
    if latest < opt.best_val - MIN_IMPROVEMENT:
        opt.best_val = latest
        opt.plateau_epochs = 0
    else:
        opt.plateau_epochs += 1
        if opt.plateau_epochs >= config.patience_decay:
            opt.lr = max(opt.lr * config.lr_decay_factor, LR_FLOOR)
            opt.plateau_epochs = 0
    return opt.lr


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    seconds: float


@dataclass
class TrainResult:
    state: ModelState
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    first_batch_loss: float = math.nan


def write_epoch_log(entries: list[EpochLog], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr", "seconds"])
        for e in entries:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss), repr(e.lr), f"{e.seconds:.3f}"])


def evaluate_loss(state: ModelState, windows: WindowSet, batch_size: int = 4096) -> float:
    pred, _ = predict(state, windows, batch_size)
    return log_cosh_loss(windows.target_ghi, pred)[0]


def train(
    train_windows: WindowSet,
    val_windows: WindowSet,
    model_config: ModelConfig = ModelConfig(),
    train_config: TrainConfig = TrainConfig(),
    norm_stats: NormStats | None = None,
    initial_state: ModelState | None = None,
) -> TrainResult:
    """Mini-batch Adam on the log-cosh loss with early stopping on validation.

    Returns the parameters of the best validation epoch.
    """
    if len(train_windows) == 0 or len(val_windows) == 0:
        raise DataError("training and validation sets must be non-empty")
    cfg = train_config
    rng = np.random.default_rng(cfg.seed)
    state = initial_state.copy() if initial_state is not None else init_state(
        model_config, seed=int(rng.integers(2**63)), norm_stats=norm_stats
    )
    if norm_stats is not None:
        state.norm_stats = norm_stats
    opt = OptimizerState.for_params(state.params, cfg.learning_rate)
    result = TrainResult(state.copy())
    best_val = math.inf
    since_best = 0
    val_history: list[float] = []
    n = len(train_windows)

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total, count = 0.0, 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            batch = train_windows[idx]
            pred, _, trace = forward_arrays(state, batch.features, batch.celestial, batch.target_ghi_clear)
            loss, d_pred = log_cosh_loss(batch.target_ghi, pred)
            if not math.isfinite(loss):
                bad = np.flatnonzero(~np.isfinite(pred))
                where = isoformat(batch.target_time[bad[0]]) if bad.size else "unknown"
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}, sample {where}")
            if epoch == 1 and bi == 0:
                result.first_batch_loss = loss
            grads = backward(state, trace, d_pred)
            optimizer_step(state.params, grads, opt, cfg)
            state.bump()
            total += loss * idx.size
            count += idx.size
        train_loss = total / count
        val_loss = evaluate_loss(state, val_windows)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        val_history.append(val_loss)
        lr_used = opt.lr
        lr_schedule(opt, val_history, cfg)
        entry = EpochLog(epoch, train_loss, val_loss, lr_used, time.perf_counter() - t0)
        result.log.append(entry)
        log.info("epoch %d train %.4f val %.4f lr %.2e", epoch, train_loss, val_loss, lr_used)

        if val_loss < best_val - MIN_IMPROVEMENT:
            best_val = val_loss
            since_best = 0
            result.state = state.copy()
            result.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.patience_stop:
                break
    result.state.version = 0
    return result
