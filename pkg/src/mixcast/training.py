"""Training loop, MSE/MAE evaluation, and the persistence baseline.

Training minimizes MSE between denormalized predictions and raw targets (a
flag switches both the loss and the metrics to the normalized scale for
debugging).  Validation MSE drives early stopping; the best-validation
snapshot is restored before any later evaluation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import SeriesDataset, WindowIndex
from .errors import ConfigError, NumericalError
from .model import ForecastModel
from .numerics import AdamState, RunRng, Tensor, adam_step, mse_loss, no_grad
from .preprocess import build_patch_batch


@dataclass
class TrainConfig:
    epochs: int = 10
    max_steps: int | None = None       # optimizer-step budget across epochs
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 3                  # epochs without val improvement
    seed: int = 0
    eval_batch_size: int = 256
    normalized_loss: bool = False
    normalized_metrics: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")


@dataclass
class Metrics:
    mse: float
    mae: float
    n_points: int = 0


def average_metrics(items: list[Metrics]) -> Metrics:
    """Plain arithmetic mean across runs (matches published averaging)."""
    if not items:
        raise ConfigError("cannot average an empty metrics list")
    return Metrics(
        mse=float(np.mean([m.mse for m in items])),
        mae=float(np.mean([m.mae for m in items])),
        n_points=sum(m.n_points for m in items),
    )


def gather_batch(ds: SeriesDataset, batch: list[WindowIndex]) -> tuple[np.ndarray, np.ndarray]:
    """Stack raw (input, target) pairs for a list of windows."""
    inputs = np.stack([
        ds.values[w.start:w.start + w.input_length, w.channel] for w in batch
    ])
    targets = np.stack([
        ds.values[w.start + w.input_length:w.horizon_end, w.channel] for w in batch
    ])
    return inputs, targets


def _normalize_targets(targets: np.ndarray, batch) -> np.ndarray:
    return (targets - batch.mu[:, None]) / batch.scale[:, None]


def evaluate(model: ForecastModel, ds: SeriesDataset, eval_windows: list[WindowIndex],
             batch_size: int = 256, normalized: bool = False) -> Metrics:
    """MSE/MAE over all windows, channels, and horizon steps (eval mode)."""
    sq_sum = 0.0
    abs_sum = 0.0
    count = 0
    for i in range(0, len(eval_windows), batch_size):
        chunk = eval_windows[i:i + batch_size]
        inputs, targets = gather_batch(ds, chunk)
        pb = build_patch_batch(inputs, model.config.patch_config, eps=model.config.norm_eps)
        with no_grad():
            preds = model.forward(pb, training=False, denormalize=not normalized).data
        if normalized:
            targets = _normalize_targets(targets, pb)
        diff = preds - targets
        sq_sum += float(np.sum(diff * diff))
        abs_sum += float(np.sum(np.abs(diff)))
        count += diff.size
    if count == 0:
        raise ConfigError("evaluate needs at least one window")
    return Metrics(mse=sq_sum / count, mae=abs_sum / count, n_points=count)


def persistence_baseline(ds: SeriesDataset, eval_windows: list[WindowIndex],
                         normalized: bool = False) -> Metrics:
    """Repeat the last observed input value across the horizon."""
    sq_sum = 0.0
    abs_sum = 0.0
    count = 0
    for i in range(0, len(eval_windows), 4096):
        chunk = eval_windows[i:i + 4096]
        inputs, targets = gather_batch(ds, chunk)
        preds = np.repeat(inputs[:, -1:], targets.shape[1], axis=1)
        if normalized:
            from .preprocess import instance_normalize

            for j in range(len(chunk)):
                _, stats = instance_normalize(inputs[j])
                targets[j] = (targets[j] - stats.mu) / stats.scale
                preds[j] = (preds[j] - stats.mu) / stats.scale
        diff = preds - targets
        sq_sum += float(np.sum(diff * diff))
        abs_sum += float(np.sum(np.abs(diff)))
        count += diff.size
    if count == 0:
        raise ConfigError("persistence baseline needs at least one window")
    return Metrics(mse=sq_sum / count, mae=abs_sum / count, n_points=count)


@dataclass
class TrainResult:
    steps: int = 0
    epochs_run: int = 0
    train_curve: list[float] = field(default_factory=list)   # mean loss per epoch
    val_curve: list[float] = field(default_factory=list)     # val MSE per epoch
    best_val: float | None = None
    best_epoch: int | None = None
    seconds: float = 0.0


def train(model: ForecastModel, ds: SeriesDataset, train_windows: list[WindowIndex],
          val_windows: list[WindowIndex] | None, tc: TrainConfig, rng: RunRng) -> TrainResult:
    """Adam training with per-epoch validation early stopping.

    The freeze policy is already baked into the parameter flags at build
    time; the optimizer state covers exactly the trainable set.
    """
    if not train_windows:
        raise ConfigError("train needs at least one window")
    adam = AdamState.for_params(model.params, lr=tc.lr, betas=(tc.beta1, tc.beta2),
                                eps=tc.adam_eps)
    result = TrainResult()
    started = time.perf_counter()
    best_snapshot = model.params.snapshot()
    bad_epochs = 0
    order = np.arange(len(train_windows))

    for epoch in range(tc.epochs):
        if tc.max_steps is not None and result.steps >= tc.max_steps:
            break
        rng.shuffle.shuffle(order)
        epoch_losses = []
        for lo in range(0, len(order), tc.batch_size):
            if tc.max_steps is not None and result.steps >= tc.max_steps:
                break
            chunk = [train_windows[i] for i in order[lo:lo + tc.batch_size]]
            inputs, targets = gather_batch(ds, chunk)
            pb = build_patch_batch(inputs, model.config.patch_config, eps=model.config.norm_eps)
            if tc.normalized_loss:
                targets = _normalize_targets(targets, pb)
            model.params.zero_grads()
            pred = model.forward(pb, training=True, drop_rng=rng.dropout,
                                 denormalize=not tc.normalized_loss)
            loss = mse_loss(pred, Tensor(targets))
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"training diverged at step {result.steps}")
            loss.backward()
            adam_step(model.params, adam)
            epoch_losses.append(value)
            result.steps += 1
        if not epoch_losses:
            break
        result.epochs_run = epoch + 1
        result.train_curve.append(float(np.mean(epoch_losses)))
        if val_windows:
            val = evaluate(model, ds, val_windows, batch_size=tc.eval_batch_size,
                           normalized=tc.normalized_metrics)
            result.val_curve.append(val.mse)
            if result.best_val is None or val.mse < result.best_val:
                result.best_val = val.mse
                result.best_epoch = epoch + 1
                best_snapshot = model.params.snapshot()
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= tc.patience:
                    break

    if val_windows and result.best_val is not None:
        model.params.restore(best_snapshot)
    result.seconds = time.perf_counter() - started
    return result
