"""Command-line entry point.

Commands: train, eval, fewshot, zeroshot, ablate, probe, gradcheck, synth.
Every run takes a ``--config`` file (key=value sections) plus repeatable
``--set section.key=value`` overrides, and writes its artifacts under
``<out>/<run-name>/``: report.txt, metrics.csv, weights.bin, and
sim_layer_<n>.csv for probes.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.  The default output root comes from $MIXCAST_OUT (fallback ./out).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .data import default_split, load_csv, windows
from .diagnostics import run_gradient_check
from .errors import (
    ConfigError,
    DataError,
    HarnessError,
    MixcastError,
    NumericalError,
    StateError,
    WeightFormatError,
)
from .mixers import similarity_matrices, write_similarity_csv
from .model import build_for_seed, load_model
from .protocols import ablation_sweep, run_few_shot, run_long_term, run_zero_shot
from .report import write_metrics_csv, write_report_txt, write_sweep_csv
from .synth import SYNTH_KINDS, synth_generate
from .training import evaluate

OUT_ENV = "MIXCAST_OUT"
GRADCHECK_THRESHOLD = 1e-4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixcast",
        description="Layer-tapped transformer forecasting with local/global mixers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file (key=value sections)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="config override (repeatable)")
        p.add_argument("--name", help="run name (default: run.name from config)")
        p.add_argument("--out", help="output root (default: $MIXCAST_OUT or ./out)")
        return p

    common(sub.add_parser("train", help="long-term protocol: train and evaluate"))
    p = common(sub.add_parser("eval", help="evaluate an existing weight file"))
    p.add_argument("--weights", help="weight file (default <out>/<name>/weights.bin)")
    p = common(sub.add_parser("fewshot", help="few-shot protocol on a training prefix"))
    p.add_argument("--fraction", type=float, help="training fraction (default from config)")
    common(sub.add_parser("zeroshot", help="train on data.path, test on data.target_path"))
    p = common(sub.add_parser("ablate", help="sweep one config axis"))
    p.add_argument("--axis", required=True,
                   help="freeze_policy | fusion | layer_selection | n_blocks | local_tap | input_length")
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--jobs", type=int, default=None, help="parallel sweep cells")
    p = common(sub.add_parser("probe", help="emit per-layer similarity matrices"))
    p.add_argument("--layer", default="all", help="'all' or one tap index")
    p.add_argument("--weights", help="optional weight file to probe")
    p = common(sub.add_parser("gradcheck", help="finite-difference gradient check"))
    p.add_argument("--h", type=float, default=1e-4, help="finite-difference step")
    p.add_argument("--seed", type=int, default=0)
    p = common(sub.add_parser("synth", help="generate a synthetic dataset CSV"))
    p.add_argument("--kind", choices=SYNTH_KINDS, default="sine_mix")
    p.add_argument("--length", type=int, default=4000)
    p.add_argument("--channels", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--path", required=True, help="output CSV path")
    return parser


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    root = args.out or cfg.run.out_dir or os.environ.get(OUT_ENV, "out")
    name = args.name or cfg.run.name
    d = Path(root) / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_dataset(cfg: ExperimentConfig):
    if not cfg.data.path:
        raise ConfigError("data.path is not set (generate one with `mixcast synth`)")
    return load_csv(cfg.data.path, name=cfg.data.name, frequency=cfg.data.frequency,
                    ett_protocol=cfg.data.ett_protocol)


def _load_target(cfg: ExperimentConfig):
    if not cfg.data.target_path:
        raise ConfigError("data.target_path is not set (needed for zeroshot)")
    return load_csv(cfg.data.target_path,
                    name=cfg.data.target_name or Path(cfg.data.target_path).stem,
                    frequency=cfg.data.target_frequency,
                    ett_protocol=cfg.data.target_ett_protocol)


def _emit(report, out: Path) -> None:
    write_metrics_csv(report, out / "metrics.csv")
    artifacts = [r.weights_path for r in report.runs if r.weights_path]
    write_report_txt(report, out / "report.txt", artifacts=artifacts)
    avg = report.average()
    for r in report.runs:
        if r.ok:
            print(f"horizon {r.horizon}: mse={r.metrics.mse:.6f} mae={r.metrics.mae:.6f} "
                  f"({r.seconds:.1f}s, {r.steps} steps)")
        else:
            print(f"horizon {r.horizon}: skipped ({r.error})")
    if avg and len([r for r in report.runs if r.ok]) > 1:
        print(f"average: mse={avg.mse:.6f} mae={avg.mae:.6f}")
    print(f"artifacts in {out}")


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides)
    out = _out_dir(args, cfg)
    ds = _load_dataset(cfg)
    _emit(run_long_term(cfg, ds, save_dir=out), out)
    return 0


def cmd_fewshot(args) -> int:
    cfg = load_config(args.config, args.overrides)
    out = _out_dir(args, cfg)
    ds = _load_dataset(cfg)
    _emit(run_few_shot(cfg, ds, fraction=args.fraction, save_dir=out), out)
    return 0


def cmd_zeroshot(args) -> int:
    cfg = load_config(args.config, args.overrides)
    out = _out_dir(args, cfg)
    _emit(run_zero_shot(cfg, _load_dataset(cfg), _load_target(cfg), save_dir=out), out)
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.overrides)
    out = _out_dir(args, cfg)
    ds = _load_dataset(cfg)
    horizon = cfg.protocol.horizons[0]
    weights = Path(args.weights) if args.weights else out / "weights.bin"
    model = load_model(cfg.model, horizon, weights)
    L = cfg.model.input_length
    ranges = default_split(ds, lookback=L, ratios=cfg.data.ratios())
    test_w = windows(ds, ranges, "test", L, horizon)
    metrics = evaluate(model, ds, test_w, batch_size=cfg.train.eval_batch_size,
                       normalized=cfg.train.normalized_metrics)
    print(f"horizon {horizon}: mse={metrics.mse:.6f} mae={metrics.mae:.6f} "
          f"({metrics.n_points} points)")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.overrides)
    out = _out_dir(args, cfg)
    ds = _load_dataset(cfg)
    values = [v for v in (p.strip() for p in args.values.split(",")) if v]
    if args.axis in ("n_blocks", "local_tap", "input_length"):
        try:
            values = [int(v) for v in values]
        except ValueError:
            raise ConfigError(f"--values for {args.axis} must be integers") from None
    jobs = args.jobs if args.jobs is not None else cfg.run.jobs
    rows = ablation_sweep(args.axis, values, cfg, ds, jobs=jobs)
    write_sweep_csv(rows, out / "metrics.csv")
    for r in rows:
        print(f"{r.axis}={r.value}: mse={r.mse:.6f} mae={r.mae:.6f} "
              f"trainable={r.params_trainable}")
    print(f"artifacts in {out}")
    return 0


def cmd_probe(args) -> int:
    cfg = load_config(args.config, args.overrides)
    out = _out_dir(args, cfg)
    ds = _load_dataset(cfg)
    horizon = cfg.protocol.horizons[0]
    if args.weights:
        model = load_model(cfg.model, horizon, args.weights)
    else:
        model, _ = build_for_seed(cfg.model, horizon, cfg.train.seed)
    L = cfg.model.input_length
    ranges = default_split(ds, lookback=L, ratios=cfg.data.ratios())
    test_w = windows(ds, ranges, "test", L, horizon)
    w = test_w[0]
    window = ds.values[w.start:w.start + L, w.channel]
    taps = model.taps_for(window)
    matrices = similarity_matrices(taps)
    if args.layer != "all":
        try:
            index = int(args.layer)
        except ValueError:
            raise ConfigError(f"--layer must be 'all' or an integer, got {args.layer!r}") from None
        if not 0 <= index < len(matrices):
            raise ConfigError(f"--layer {index} out of range 0..{len(matrices) - 1}")
        matrices = [matrices[index]]
    paths = write_similarity_csv(matrices, out)
    print(f"wrote {len(paths)} similarity matrices ({matrices[0].values.shape[0]} patches) to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config, args.overrides) if args.config or args.overrides else None
    result = run_gradient_check(cfg.model if cfg else None, seed=args.seed, h=args.h)
    print(f"checked {result.n_checked} trainable scalars "
          f"({len(result.skipped)} frozen tensors skipped)")
    print(f"max relative error {result.max_rel_error:.3e} on {result.worst_param}")
    if result.max_rel_error > GRADCHECK_THRESHOLD:
        print(f"FAIL: above threshold {GRADCHECK_THRESHOLD:g}")
        return 3
    print(f"PASS: within threshold {GRADCHECK_THRESHOLD:g}")
    return 0


def cmd_synth(args) -> int:
    path = synth_generate(args.kind, args.length, args.channels, args.seed,
                          args.path, noise_scale=args.noise)
    print(f"wrote {args.kind} dataset ({args.length} x {args.channels}) to {path}")
    return 0


_HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "fewshot": cmd_fewshot,
    "zeroshot": cmd_zeroshot,
    "ablate": cmd_ablate,
    "probe": cmd_probe,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, WeightFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, StateError, HarnessError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except MixcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
