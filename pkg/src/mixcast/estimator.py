"""Scikit-learn style wrapper around the forecasting pipeline.

``MixerForecaster`` follows the estimator protocol (`get_params`,
`set_params`, `fit`, `predict`), so it composes with tooling that clones and
configures estimators.  ``fit`` takes a chronological series shaped
``(n_timesteps,)`` or ``(n_timesteps, n_channels)``, holds out a validation
tail for early stopping, and trains one model for the configured horizon.
``predict`` maps input windows to horizon forecasts.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .data import SeriesDataset, SplitRanges, windows
from .errors import ConfigError, DataError
from .model import ModelConfig, build_for_seed
from .training import TrainConfig, evaluate, train


def check_series(X, min_length: int) -> np.ndarray:
    """Validate a chronological series: 2-D float array, finite, long enough."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DataError(f"expected a (timesteps, channels) series, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("series contains non-finite values")
    if X.shape[0] < min_length:
        raise DataError(f"series length {X.shape[0]} is shorter than required {min_length}")
    return X


class MixerForecaster(BaseEstimator, RegressorMixin):
    """Forecast `horizon` future steps from `input_length` past steps.

    Parameters mirror the library configuration; everything is univariate
    per channel with shared weights, so the channel count at predict time
    may differ from the one seen in fit.
    """

    def __init__(self, input_length=96, horizon=96, patch_length=16, patch_stride=8,
                 n_blocks=6, d_model=64, n_heads=4, d_ff=256, dropout=0.1,
                 freeze_policy="ln_pe", fusion="mixer", layer_selection="boundary",
                 local_tap=1, lr=1e-4, batch_size=32, epochs=10, max_steps=None,
                 patience=3, val_fraction=0.2, seed=0):
        self.input_length = input_length
        self.horizon = horizon
        self.patch_length = patch_length
        self.patch_stride = patch_stride
        self.n_blocks = n_blocks
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.dropout = dropout
        self.freeze_policy = freeze_policy
        self.fusion = fusion
        self.layer_selection = layer_selection
        self.local_tap = local_tap
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.patience = patience
        self.val_fraction = val_fraction
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            input_length=self.input_length,
            patch_length=self.patch_length,
            patch_stride=self.patch_stride,
            n_blocks=self.n_blocks,
            d_model=self.d_model,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            dropout=self.dropout,
            freeze_policy=self.freeze_policy,
            fusion=self.fusion,
            layer_selection=self.layer_selection,
            local_tap=self.local_tap,
        )

    def fit(self, X, y=None):
        """Train on a chronological series; the last `val_fraction` of the
        timesteps drives early stopping."""
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        need = self.input_length + self.horizon
        X = check_series(X, min_length=need + 1)
        ds = SeriesDataset(name="fit", values=X)
        n, L = ds.length, self.input_length
        if self.val_fraction > 0.0:
            val_len = max(int(round(n * self.val_fraction)), need)
            b1 = max(n - val_len, need)
            ranges = SplitRanges(train=(0, b1), val=(max(b1 - L, 0), n), test=(n, n),
                                 nominal=(b1, n, n))
            train_w = windows(ds, ranges, "train", L, self.horizon)
            val_w = windows(ds, ranges, "val", L, self.horizon)
        else:
            ranges = SplitRanges(train=(0, n), val=(n, n), test=(n, n), nominal=(n, n, n))
            train_w = windows(ds, ranges, "train", L, self.horizon)
            val_w = None
        model, rng = build_for_seed(self._model_config(), self.horizon, self.seed)
        tc = TrainConfig(
            epochs=self.epochs, max_steps=self.max_steps, batch_size=self.batch_size,
            lr=self.lr, patience=self.patience, seed=self.seed,
        )
        result = train(model, ds, train_w, val_w, tc, rng)
        self.model_ = model
        self.train_result_ = result
        self.n_channels_ = ds.n_channels
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise ConfigError("this MixerForecaster instance is not fitted yet")

    def predict(self, X) -> np.ndarray:
        """Forecast from input windows.

        Accepts one series of shape (input_length,) or (input_length,
        channels) (forecast per channel), or a stack of univariate windows
        (n_windows, input_length).
        """
        self._require_fitted()
        X = np.asarray(X, dtype=np.float64)
        L = self.input_length
        if X.ndim == 1:
            if X.shape[0] != L:
                raise DataError(f"window length {X.shape[0]} != input_length {L}")
            return self.model_.predict(X[None, :])[0]
        if X.ndim != 2:
            raise DataError(f"expected 1-D or 2-D input, got shape {X.shape}")
        if X.shape[0] == L and X.shape[1] != L:
            # (input_length, channels): forecast each channel
            check_series(X, min_length=L)
            return self.model_.predict(X.T).T
        if X.shape[1] != L:
            raise DataError(f"windows must have length {L}, got {X.shape[1]}")
        return self.model_.predict(X)

    def score(self, X, y=None) -> float:
        """Negative test MSE over all windows of a held-out series."""
        self._require_fitted()
        X = check_series(X, min_length=self.input_length + self.horizon)
        ds = SeriesDataset(name="score", values=X)
        ranges = SplitRanges(train=(0, 0), val=(0, 0), test=(0, ds.length),
                             nominal=(0, 0, ds.length))
        test_w = windows(ds, ranges, "test", self.input_length, self.horizon)
        return -evaluate(self.model_, ds, test_w).mse
