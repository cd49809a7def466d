"""Experiment protocols: long-term forecasting, few-shot training on a
prefix of the training timesteps, zero-shot transfer between datasets, and
parameter/ablation sweeps.

Every protocol trains one model per horizon (the head width depends on it)
from the same initialization seed.  A horizon that cannot satisfy the data
requirements produces an error row (mirroring dashed cells in published
few-shot tables) instead of aborting the remaining horizons; if every
horizon fails, the error propagates.
"""

from __future__ import annotations

import concurrent.futures
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import ExperimentConfig, copy_config
from .data import (
    SeriesDataset,
    default_split,
    few_shot_subset,
    windows,
    zero_shot_pair,
)
from .errors import ConfigError, InsufficientDataError, StateError
from .model import build_for_seed, save_model
from .training import Metrics, average_metrics, evaluate, persistence_baseline, train


@dataclass
class HorizonRun:
    horizon: int
    metrics: Metrics | None = None
    baseline: Metrics | None = None
    params_total: int = 0
    params_trainable: int = 0
    steps: int = 0
    seconds: float = 0.0
    train_curve: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)
    best_val: float | None = None
    weights_path: str | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.metrics is not None


@dataclass
class RunReport:
    dataset: str
    protocol: str
    seed: int
    config: dict[str, str]
    runs: list[HorizonRun] = field(default_factory=list)

    def average(self) -> Metrics | None:
        good = [r.metrics for r in self.runs if r.ok]
        return average_metrics(good) if good else None

    def run_for(self, horizon: int) -> HorizonRun:
        for r in self.runs:
            if r.horizon == horizon:
                return r
        raise ConfigError(f"no run for horizon {horizon}")


def _horizon_run(exp: ExperimentConfig, train_ds: SeriesDataset, horizon: int,
                 train_w, val_w, eval_ds: SeriesDataset, test_w,
                 check_purity: bool = False,
                 save_dir: Path | None = None, single_horizon: bool = True) -> HorizonRun:
    started = time.perf_counter()
    model, rng = build_for_seed(exp.model, horizon, exp.train.seed)
    tr = train(model, train_ds, train_w, val_w, exp.train, rng)
    if check_purity:
        before = model.params.hash_values()
    metrics = evaluate(model, eval_ds, test_w, batch_size=exp.train.eval_batch_size,
                       normalized=exp.train.normalized_metrics)
    if check_purity and model.params.hash_values() != before:
        raise StateError("zero-shot evaluation mutated model parameters")
    baseline = persistence_baseline(eval_ds, test_w, normalized=exp.train.normalized_metrics)
    weights_path = None
    if save_dir is not None:
        name = "weights.bin" if single_horizon else f"weights_T{horizon}.bin"
        save_model(model, Path(save_dir) / name)
        weights_path = name
    return HorizonRun(
        horizon=horizon,
        metrics=metrics,
        baseline=baseline,
        params_total=model.n_params(),
        params_trainable=model.n_trainable(),
        steps=tr.steps,
        seconds=time.perf_counter() - started,
        train_curve=tr.train_curve,
        val_curve=tr.val_curve,
        best_val=tr.best_val,
        weights_path=weights_path,
    )


def _finish(report: RunReport) -> RunReport:
    if not any(r.ok for r in report.runs):
        first = next((r.error for r in report.runs if r.error), "no horizons ran")
        raise InsufficientDataError(f"{report.dataset}/{report.protocol}: {first}")
    return report


def run_long_term(exp: ExperimentConfig, ds: SeriesDataset,
                  save_dir: Path | None = None) -> RunReport:
    L = exp.model.input_length
    ranges = default_split(ds, lookback=L, ratios=exp.data.ratios())
    report = RunReport(dataset=ds.name, protocol="long_term",
                       seed=exp.train.seed, config=exp.snapshot())
    single = len(exp.protocol.horizons) == 1
    for T in exp.protocol.horizons:
        try:
            train_w = windows(ds, ranges, "train", L, T)
            val_w = windows(ds, ranges, "val", L, T)
            test_w = windows(ds, ranges, "test", L, T)
            report.runs.append(_horizon_run(exp, ds, T, train_w, val_w, ds, test_w,
                                            save_dir=save_dir, single_horizon=single))
        except InsufficientDataError as exc:
            report.runs.append(HorizonRun(horizon=T, error=str(exc)))
    return _finish(report)


def run_few_shot(exp: ExperimentConfig, ds: SeriesDataset,
                 fraction: float | None = None,
                 save_dir: Path | None = None) -> RunReport:
    fraction = exp.protocol.fraction if fraction is None else fraction
    L = exp.model.input_length
    ranges = default_split(ds, lookback=L, ratios=exp.data.ratios())
    report = RunReport(dataset=ds.name, protocol=f"few_shot_{fraction:g}",
                       seed=exp.train.seed, config=exp.snapshot())
    single = len(exp.protocol.horizons) == 1
    for T in exp.protocol.horizons:
        try:
            full = windows(ds, ranges, "train", L, T)
            train_w = few_shot_subset(full, fraction, ranges.train, seed=exp.train.seed)
            val_w = windows(ds, ranges, "val", L, T)
            test_w = windows(ds, ranges, "test", L, T)
            report.runs.append(_horizon_run(exp, ds, T, train_w, val_w, ds, test_w,
                                            save_dir=save_dir, single_horizon=single))
        except InsufficientDataError as exc:
            report.runs.append(HorizonRun(horizon=T, error=str(exc)))
    return _finish(report)


def run_zero_shot(exp: ExperimentConfig, source: SeriesDataset,
                  target: SeriesDataset,
                  save_dir: Path | None = None) -> RunReport:
    L = exp.model.input_length
    plan = zero_shot_pair(source, target, lookback=L,
                          source_ratios=exp.data.ratios())
    report = RunReport(dataset=f"{source.name}->{target.name}", protocol="zero_shot",
                       seed=exp.train.seed, config=exp.snapshot())
    single = len(exp.protocol.horizons) == 1
    for T in exp.protocol.horizons:
        try:
            train_w = windows(source, plan.source_ranges, "train", L, T)
            val_w = windows(source, plan.source_ranges, "val", L, T)
            test_w = windows(target, plan.target_ranges, "test", L, T)
            report.runs.append(
                _horizon_run(exp, source, T, train_w, val_w, target, test_w,
                             check_purity=True, save_dir=save_dir, single_horizon=single)
            )
        except InsufficientDataError as exc:
            report.runs.append(HorizonRun(horizon=T, error=str(exc)))
    return _finish(report)


def run_protocol(kind: str, exp: ExperimentConfig, ds: SeriesDataset,
                 target: SeriesDataset | None = None,
                 save_dir: Path | None = None) -> RunReport:
    if kind == "long_term":
        return run_long_term(exp, ds, save_dir=save_dir)
    if kind == "few_shot":
        return run_few_shot(exp, ds, save_dir=save_dir)
    if kind == "zero_shot":
        if target is None:
            raise ConfigError("zero_shot needs a target dataset")
        return run_zero_shot(exp, ds, target, save_dir=save_dir)
    raise ConfigError(f"unknown protocol {kind!r}")


# ---------------------------------------------------------------------------
# ablation sweeps
# ---------------------------------------------------------------------------

SWEEP_AXES = {
    "freeze_policy": "freeze_policy",
    "fusion": "fusion",
    "layer_selection": "layer_selection",
    "n_blocks": "n_blocks",
    "local_tap": "local_tap",
    "input_length": "input_length",
}


@dataclass
class SweepRow:
    axis: str
    value: str
    mse: float
    mae: float
    params_total: int
    params_trainable: int
    seconds: float


def _sweep_cell(args) -> SweepRow:
    axis, value, exp, ds = args
    field_name = SWEEP_AXES[axis]
    exp2 = copy_config(exp)
    overrides = {field_name: value}
    if field_name == "n_blocks" and exp.model.local_tap > int(value):
        overrides["local_tap"] = int(value)  # keep the tap in range for shallow stacks
    exp2.model = exp2.model.with_overrides(**overrides)
    report = run_protocol(exp.protocol.kind, exp2, ds)
    avg = report.average()
    good = [r for r in report.runs if r.ok]
    return SweepRow(
        axis=axis,
        value=str(value),
        mse=avg.mse,
        mae=avg.mae,
        params_total=good[0].params_total,
        params_trainable=good[0].params_trainable,
        seconds=sum(r.seconds for r in report.runs),
    )


def ablation_sweep(axis: str, values: list, exp: ExperimentConfig,
                   ds: SeriesDataset, jobs: int = 1) -> list[SweepRow]:
    """Run the configured protocol once per axis value with shared seed and
    data; rows come back in the order the values were given."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r} (have {sorted(SWEEP_AXES)})")
    if not values:
        raise ConfigError("sweep needs at least one value")
    tasks = [(axis, v, exp, ds) for v in values]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_cell, tasks))
    return [_sweep_cell(t) for t in tasks]
