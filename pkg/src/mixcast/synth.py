"""Deterministic synthetic series for smoke tests and the acceptance suite.

``sine_mix`` sums two or three incommensurate sinusoids per channel plus
small Gaussian noise; ``ramp`` is the row index; ``noise`` is white.  The
same seed always reproduces the same values (and the same CSV bytes), and
the drawn sinusoid parameters are returned so a zero-noise channel can be
re-evaluated in closed form.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

SYNTH_KINDS = ("sine_mix", "ramp", "noise")


@dataclass(frozen=True)
class SineComponent:
    amplitude: float
    period: float
    phase: float

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        return self.amplitude * np.sin(2.0 * np.pi * t / self.period + self.phase)


def sine_mix_channel(rng: np.random.Generator, length: int,
                     noise_scale: float) -> tuple[np.ndarray, list[SineComponent]]:
    t = np.arange(length, dtype=np.float64)
    comps = []
    for _ in range(int(rng.integers(2, 4))):
        comps.append(SineComponent(
            amplitude=float(rng.uniform(0.5, 1.5)),
            period=float(rng.uniform(16.0, 200.0)),
            phase=float(rng.uniform(0.0, 2.0 * np.pi)),
        ))
    values = sum(c.evaluate(t) for c in comps)
    if noise_scale > 0:
        values = values + noise_scale * rng.standard_normal(length)
    return values, comps


def synth_series(kind: str, length: int, channels: int, seed: int,
                 noise_scale: float = 0.05) -> tuple[np.ndarray, list[list[SineComponent]]]:
    """Generate a (length, channels) array; sine components returned per
    channel (empty lists for ramp/noise)."""
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown synthetic kind {kind!r} (have {SYNTH_KINDS})")
    if length < 2 or channels < 1:
        raise ConfigError(f"need length >= 2 and channels >= 1, got {length}/{channels}")
    rng = np.random.default_rng(seed)
    values = np.empty((length, channels))
    components: list[list[SineComponent]] = []
    for c in range(channels):
        if kind == "sine_mix":
            values[:, c], comps = sine_mix_channel(rng, length, noise_scale)
            components.append(comps)
        elif kind == "ramp":
            values[:, c] = np.arange(length, dtype=np.float64)
            components.append([])
        else:
            values[:, c] = rng.standard_normal(length)
            components.append([])
    return values, components


def synth_generate(kind: str, length: int, channels: int, seed: int,
                   path: str | Path, noise_scale: float = 0.05) -> Path:
    """Write a synthetic dataset in the standard CSV format."""
    values, _ = synth_series(kind, length, channels, seed, noise_scale)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + [f"ch{i}" for i in range(channels)])
        for t in range(length):
            writer.writerow([t] + [f"{v:.12g}" for v in values[t]])
    return path
