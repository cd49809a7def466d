"""Reversible per-window instance normalization and overlapping patch
construction, plus the inverse transform applied to final predictions.

Each input window is standardized by its own mean and (population) variance,
and the saved statistics invert the transform on the model output.  The
normalized series is extended by replicating its last value, then cut into
length-P patches at stride S.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass
class NormStats:
    """Per-window standardization statistics."""

    mu: float
    sigma2: float
    eps: float

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ConfigError(f"variance must be non-negative, got {self.sigma2}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.sigma2 + self.eps))


@dataclass
class PatchConfig:
    """Patch length P, stride S, and tail replication amount."""

    length: int = 16
    stride: int = 8
    pad: int | None = None  # defaults to stride

    def __post_init__(self):
        if self.pad is None:
            self.pad = self.stride
        if not 1 <= self.stride <= self.length:
            raise ConfigError(f"need 1 <= stride <= length, got S={self.stride}, P={self.length}")
        if self.pad < 0:
            raise ConfigError(f"pad must be non-negative, got {self.pad}")

    def n_patches(self, input_length: int) -> int:
        usable = input_length + self.pad - self.length
        if usable < 0:
            raise DimensionError(
                f"input length {input_length} too short for P={self.length}, pad={self.pad}"
            )
        return usable // self.stride + 1


def instance_normalize(x: np.ndarray, eps: float = 1e-5) -> tuple[np.ndarray, NormStats]:
    """Standardize one window by its own mean and variance.

    Variance is the mean of squared deviations (population form, 1/L).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DimensionError(f"expected a non-empty 1-D window, got shape {x.shape}")
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    mu = float(x.mean())
    sigma2 = float(((x - mu) ** 2).mean())
    stats = NormStats(mu=mu, sigma2=sigma2, eps=eps)
    return (x - mu) / stats.scale, stats


def instance_denormalize(y: np.ndarray, stats: NormStats) -> np.ndarray:
    """Invert :func:`instance_normalize` using the matching window's stats."""
    return np.asarray(y, dtype=np.float64) * stats.scale + stats.mu


def patch(x: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """Cut one window into overlapping patches, replication-padded at the tail.

    Returns an (N_p, P) array where patch j starts at offset j*S of the
    padded series.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"expected a 1-D window, got shape {x.shape}")
    if x.size < max(1, cfg.length - cfg.pad):
        raise DimensionError(
            f"window of length {x.size} too short for P={cfg.length} with pad={cfg.pad}"
        )
    padded = np.concatenate([x, np.full(cfg.pad, x[-1])]) if cfg.pad else x
    n = cfg.n_patches(x.size)
    out = np.empty((n, cfg.length))
    for j in range(n):
        out[j] = padded[j * cfg.stride:j * cfg.stride + cfg.length]
    return out


@dataclass
class PatchBatch:
    """A batch of patched, normalized windows with their inversion stats."""

    patches: np.ndarray            # (B, N_p, P)
    stats: list[NormStats] = field(default_factory=list)

    @property
    def mu(self) -> np.ndarray:
        return np.array([s.mu for s in self.stats])

    @property
    def scale(self) -> np.ndarray:
        return np.array([s.scale for s in self.stats])


def build_patch_batch(windows: np.ndarray, cfg: PatchConfig, eps: float = 1e-5) -> PatchBatch:
    """Normalize and patch a (B, L) stack of univariate input windows."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 2:
        raise DimensionError(f"expected (B, L) windows, got shape {windows.shape}")
    b, length = windows.shape
    n = cfg.n_patches(length)
    patches = np.empty((b, n, cfg.length))
    stats = []
    for i in range(b):
        normed, st = instance_normalize(windows[i], eps=eps)
        patches[i] = patch(normed, cfg)
        stats.append(st)
    return PatchBatch(patches=patches, stats=stats)
