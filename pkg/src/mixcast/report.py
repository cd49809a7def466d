"""Run-report serialization: a human-readable text report plus a metrics CSV.

CSV columns: dataset, protocol, horizon, mse, mae, params_total,
params_trainable, seconds.  Horizons that could not run carry '-' in their
metric cells; a final ``avg`` row averages the available horizons.  All
numeric formatting is fixed so identical runs rewrite identical bytes
(wall-clock seconds are the one run-dependent column).
"""

from __future__ import annotations

import csv
from pathlib import Path

from .protocols import RunReport, SweepRow

METRICS_COLUMNS = ["dataset", "protocol", "horizon", "mse", "mae",
                   "params_total", "params_trainable", "seconds"]


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def write_metrics_csv(report: RunReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for r in report.runs:
            if r.ok:
                writer.writerow([
                    report.dataset, report.protocol, r.horizon,
                    _fmt(r.metrics.mse), _fmt(r.metrics.mae),
                    r.params_total, r.params_trainable, f"{r.seconds:.3f}",
                ])
            else:
                writer.writerow([report.dataset, report.protocol, r.horizon,
                                 "-", "-", "-", "-", f"{r.seconds:.3f}"])
        good = [r for r in report.runs if r.ok]
        if len(good) > 1:
            avg = report.average()
            writer.writerow([
                report.dataset, report.protocol, "avg",
                _fmt(avg.mse), _fmt(avg.mae),
                good[0].params_total, good[0].params_trainable,
                f"{sum(r.seconds for r in report.runs):.3f}",
            ])
    return path


def write_report_txt(report: RunReport, path: str | Path,
                     artifacts: list[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"dataset:  {report.dataset}",
        f"protocol: {report.protocol}",
        f"seed:     {report.seed}",
        "",
        "[config]",
    ]
    for key in sorted(report.config):
        lines.append(f"{key} = {report.config[key]}")
    for r in report.runs:
        lines += ["", f"[horizon {r.horizon}]"]
        if not r.ok:
            lines.append(f"error = {r.error}")
            continue
        lines += [
            f"mse = {_fmt(r.metrics.mse)}",
            f"mae = {_fmt(r.metrics.mae)}",
            f"baseline_mse = {_fmt(r.baseline.mse)}" if r.baseline else "baseline_mse = -",
            f"params_total = {r.params_total}",
            f"params_trainable = {r.params_trainable}",
            f"steps = {r.steps}",
            f"seconds = {r.seconds:.3f}",
            "train_loss_curve = " + ",".join(_fmt(v) for v in r.train_curve),
            "val_mse_curve = " + ",".join(_fmt(v) for v in r.val_curve),
        ]
        if r.best_val is not None:
            lines.append(f"best_val_mse = {_fmt(r.best_val)}")
    avg = report.average()
    if avg is not None and len([r for r in report.runs if r.ok]) > 1:
        lines += ["", "[average]", f"mse = {_fmt(avg.mse)}", f"mae = {_fmt(avg.mae)}"]
    if artifacts:
        lines += ["", "[artifacts]"] + [f"- {a}" for a in artifacts]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_sweep_csv(rows: list[SweepRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "mse", "mae",
                         "params_total", "params_trainable", "seconds"])
        for r in rows:
            writer.writerow([r.axis, r.value, _fmt(r.mse), _fmt(r.mae),
                             r.params_total, r.params_trainable, f"{r.seconds:.3f}"])
    return path
