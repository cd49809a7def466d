"""CSV time-series ingestion, chronological splitting, sliding-window sample
generation, few-shot subsetting, and zero-shot dataset pairing.

CSV format: first row is a header; an optional ``date`` column carries
timestamps; every other column is a real-valued channel.  Rows with
non-finite cells are rejected outright (no imputation).

Two window-counting conventions coexist: ``input_window_count`` counts every
start whose *input* fits (segment length including lookback overlap minus
L plus one) and reproduces the published ETT split sizes, while ``windows``
emits only starts whose input *and* horizon both fit, which is what the
training and evaluation loaders consume.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, InsufficientDataError

SEGMENTS = ("train", "val", "test")

#: 30-day months, matching the published ETT boundary convention.
_ETT_MONTHS = (12, 4, 4)


@dataclass
class SeriesDataset:
    """A named multichannel series with equal-length real channels."""

    name: str
    values: np.ndarray                      # (length, D) float64
    columns: list[str] = field(default_factory=list)
    timestamps: list[str] | None = None
    frequency: str = ""
    ett_protocol: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if not self.columns:
            self.columns = [f"ch{i}" for i in range(self.values.shape[1])]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def channel(self, i: int) -> np.ndarray:
        return self.values[:, i]


@dataclass
class CsvSchema:
    """Column expectations for :func:`load_csv`."""

    timestamp_column: str | None = "date"
    value_columns: list[str] | None = None  # None: every non-timestamp column


def load_csv(path: str | Path, schema: CsvSchema | None = None, *,
             name: str | None = None, frequency: str = "",
             ett_protocol: bool = False) -> SeriesDataset:
    """Parse a CSV file into a dataset, rejecting bad cells with their location."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    schema = schema or CsvSchema()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]

        ts_col = None
        if schema.timestamp_column and schema.timestamp_column in header:
            ts_col = header.index(schema.timestamp_column)
        if schema.value_columns is not None:
            missing = [c for c in schema.value_columns if c not in header]
            if missing:
                raise DataError(f"{path}: missing columns {missing} (header: {header})")
            value_idx = [header.index(c) for c in schema.value_columns]
        else:
            value_idx = [i for i in range(len(header)) if i != ts_col]
        if not value_idx:
            raise DataError(f"{path}: no value columns")

        rows: list[list[float]] = []
        timestamps: list[str] | None = [] if ts_col is not None else None
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise DataError(f"{path}: line {line_no} has {len(row)} cells, expected {len(header)}")
            parsed = []
            for idx in value_idx:
                cell = row[idx].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: line {line_no}, column '{header[idx]}': cannot parse {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: line {line_no}, column '{header[idx]}': non-finite value {cell!r}"
                    )
                parsed.append(v)
            rows.append(parsed)
            if timestamps is not None:
                timestamps.append(row[ts_col].strip())
    if not rows:
        raise DataError(f"{path}: no data rows")
    return SeriesDataset(
        name=name or path.stem,
        values=np.array(rows),
        columns=[header[i] for i in value_idx],
        timestamps=timestamps,
        frequency=frequency,
        ett_protocol=ett_protocol,
    )


@dataclass
class SplitSpec:
    """Chronological split by ratios or explicit boundaries.

    ``lookback`` > 0 rolls the val/test starts back by that many points so
    their first forecast target sits right after the nominal boundary.
    """

    ratios: tuple[float, float, float] | None = (0.7, 0.1, 0.2)
    boundaries: tuple[int, int] | None = None           # (end of train, end of val)
    total: int | None = None                            # with boundaries: end of test
    lookback: int = 0

    def __post_init__(self):
        if self.boundaries is None and self.ratios is None:
            raise ConfigError("SplitSpec needs ratios or boundaries")
        if self.ratios is not None and self.boundaries is None:
            if abs(sum(self.ratios) - 1.0) > 1e-9:
                raise ConfigError(f"split ratios must sum to 1, got {self.ratios}")
        if self.lookback < 0:
            raise ConfigError(f"lookback must be non-negative, got {self.lookback}")


@dataclass
class SplitRanges:
    """Absolute [start, end) ranges per segment, lookback already applied."""

    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]
    nominal: tuple[int, int, int]  # train end, val end, test end

    def segment(self, which: str) -> tuple[int, int]:
        if which not in SEGMENTS:
            raise ConfigError(f"unknown segment {which!r}")
        return getattr(self, which)


def steps_per_ett_month(frequency: str) -> int:
    """30-day month length in samples for the fixed ETT boundary protocol."""
    f = frequency.strip().lower()
    if f in ("1h", "h", "1hour", "hourly"):
        return 30 * 24
    if f in ("15min", "15m", "15t"):
        return 30 * 24 * 4
    raise ConfigError(f"no ETT boundary convention for frequency {frequency!r}")


def ett_boundaries(frequency: str) -> tuple[int, int, int]:
    month = steps_per_ett_month(frequency)
    t, v, s = _ETT_MONTHS
    return month * t, month * (t + v), month * (t + v + s)


def split(ds: SeriesDataset, spec: SplitSpec) -> SplitRanges:
    """Resolve the three chronological segments of a dataset."""
    n = ds.length
    if spec.boundaries is not None:
        b1, b2 = spec.boundaries
        end = spec.total if spec.total is not None else n
    else:
        r_train, r_val, _ = spec.ratios
        b1 = int(n * r_train)
        b2 = b1 + int(n * r_val)
        end = n
    if not (0 < b1 < b2 <= end <= n):
        raise DataError(
            f"{ds.name}: split boundaries ({b1}, {b2}, {end}) not monotone within length {n}"
        )
    lb = spec.lookback
    return SplitRanges(
        train=(0, b1),
        val=(max(b1 - lb, 0), b2),
        test=(max(b2 - lb, 0), end),
        nominal=(b1, b2, end),
    )


def ett_split(ds: SeriesDataset, lookback: int = 0) -> SplitRanges:
    b1, b2, end = ett_boundaries(ds.frequency)
    if end > ds.length:
        raise DataError(
            f"{ds.name}: length {ds.length} shorter than ETT protocol end {end}"
        )
    return split(ds, SplitSpec(ratios=None, boundaries=(b1, b2), total=end, lookback=lookback))


def default_split(ds: SeriesDataset, lookback: int = 0,
                  ratios: tuple[float, float, float] | None = None) -> SplitRanges:
    """ETT-flagged datasets get fixed month boundaries; everything else ratios."""
    if ds.ett_protocol:
        return ett_split(ds, lookback=lookback)
    return split(ds, SplitSpec(ratios=ratios or (0.7, 0.1, 0.2), lookback=lookback))


def input_window_count(ranges: SplitRanges, segment: str, input_length: int) -> int:
    """Inputs-only convention: every start whose input fits, horizon ignored.

    Reproduces the published per-segment split sizes (e.g. ETTh 8545/2881/2881
    at L=96 with lookback overlap).
    """
    start, end = ranges.segment(segment)
    return max(end - start - input_length + 1, 0)


@dataclass(frozen=True)
class WindowIndex:
    """One (input, horizon) sample: channel c, input [start, start+L),
    horizon [start+L, start+L+T)."""

    segment: str
    start: int
    input_length: int
    horizon: int
    channel: int

    @property
    def horizon_end(self) -> int:
        return self.start + self.input_length + self.horizon


def windows(ds: SeriesDataset, ranges: SplitRanges, segment: str,
            input_length: int, horizon: int,
            channel_independent: bool = True) -> list[WindowIndex]:
    """Every window whose input and horizon both lie inside the segment."""
    if horizon < 1:
        raise ConfigError(f"horizon must be at least 1, got {horizon}")
    if input_length < 1:
        raise ConfigError(f"input length must be at least 1, got {input_length}")
    start, end = ranges.segment(segment)
    n_starts = end - start - input_length - horizon + 1
    if n_starts < 1:
        raise InsufficientDataError(
            f"{ds.name}: {segment} segment of length {end - start} cannot fit "
            f"L={input_length} plus T={horizon}"
        )
    channels = range(ds.n_channels) if channel_independent else (0,)
    return [
        WindowIndex(segment, start + i, input_length, horizon, c)
        for c in channels
        for i in range(n_starts)
    ]


def few_shot_subset(train_windows: list[WindowIndex], fraction: float,
                    train_range: tuple[int, int], seed: int | None = None) -> list[WindowIndex]:
    """Restrict training to the chronological prefix holding ``fraction`` of
    the training timesteps; membership is deterministic (the seed only matters
    to later shuffling, never to which windows survive)."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"few-shot fraction must be in (0, 1], got {fraction}")
    start, end = train_range
    reduced_end = start + math.ceil(fraction * (end - start))
    kept = [w for w in train_windows if w.horizon_end <= reduced_end]
    if not kept:
        need = train_windows[0].input_length + train_windows[0].horizon if train_windows else 0
        raise InsufficientDataError(
            f"few-shot prefix of {reduced_end - start} points cannot fit one "
            f"window of L+T={need}"
        )
    return kept


@dataclass
class TransferPlan:
    """Zero-shot pairing: fit on the source, score on the target's test set."""

    source: SeriesDataset
    target: SeriesDataset
    source_ranges: SplitRanges
    target_ranges: SplitRanges

    @property
    def degenerate(self) -> bool:
        return self.source is self.target or self.source.name == self.target.name


def zero_shot_pair(source: SeriesDataset, target: SeriesDataset,
                   lookback: int = 0,
                   source_ratios: tuple[float, float, float] | None = None,
                   target_ratios: tuple[float, float, float] | None = None) -> TransferPlan:
    """Validate both datasets and record the transfer plan.  Channel counts
    may differ: every sample is univariate."""
    return TransferPlan(
        source=source,
        target=target,
        source_ranges=default_split(source, lookback=lookback, ratios=source_ratios),
        target_ranges=default_split(target, lookback=lookback, ratios=target_ratios),
    )
