"""Full forecasting model: normalization/patching geometry, backbone, fusion
stage, and horizon head assembled behind one parameter set.

One model instance serves one horizon (the head width depends on it);
protocols that sweep horizons build one model per horizon from the same
initialization seed so the shared parts start identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import backbone as bb
from . import mixers as mx
from .errors import ConfigError
from .numerics import ParamSet, RunRng, Tensor, no_grad
from .preprocess import PatchBatch, PatchConfig, build_patch_batch


@dataclass
class ModelConfig:
    """Architecture and fusion hyperparameters (everything but the horizon)."""

    input_length: int = 96
    patch_length: int = 16
    patch_stride: int = 8
    patch_pad: int | None = None          # defaults to the stride
    max_patches: int = 64                 # positional capacity; grows to fit
    n_blocks: int = 6
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    d_hidden: int | None = None           # mixer width, defaults to d_model
    dropout: float = 0.1
    causal: bool = True
    use_bias: bool = True                 # mixer/head biases
    ln_scope: str = "all"
    norm_eps: float = 1e-5
    freeze_policy: str = "ln_pe"
    fusion: str = "mixer"
    layer_selection: str = "boundary"
    local_tap: int = 1

    def __post_init__(self):
        if self.input_length < 1:
            raise ConfigError(f"input length must be positive, got {self.input_length}")
        self.patch_config  # validates patch geometry eagerly
        if not 0 <= self.local_tap <= self.n_blocks:
            raise ConfigError(
                f"local tap {self.local_tap} out of range for {self.n_blocks} blocks"
            )
        try:
            bb.FreezePolicy(self.freeze_policy)
            mx.FusionVariant(self.fusion)
            mx.LayerSelection(self.layer_selection)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def patch_config(self) -> PatchConfig:
        return PatchConfig(length=self.patch_length, stride=self.patch_stride, pad=self.patch_pad)

    @property
    def n_patches(self) -> int:
        return self.patch_config.n_patches(self.input_length)

    def backbone_config(self) -> bb.BackboneConfig:
        return bb.BackboneConfig(
            n_blocks=self.n_blocks,
            d_model=self.d_model,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            patch_length=self.patch_length,
            max_patches=max(self.max_patches, self.n_patches),
            causal=self.causal,
            dropout=self.dropout,
            ln_scope=self.ln_scope,
        )

    def with_overrides(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


@dataclass
class ForecastModel:
    """A built model: backbone state, fusion stage, and the unified
    parameter set feeding the optimizer and weight files."""

    config: ModelConfig
    horizon: int
    backbone: bb.BackboneState
    fusion: mx.FusionParams
    params: ParamSet
    backbone_trainable: int = 0           # scalars in freeze-policy scope

    def forward(self, batch: PatchBatch, training: bool = False,
                drop_rng: np.random.Generator | None = None,
                denormalize: bool = True,
                return_taps: bool = False):
        taps = bb.forward(batch.patches, self.backbone, training=training, drop_rng=drop_rng)
        pred = mx.fuse_and_project(
            taps.x_tilde, taps, self.fusion, batch,
            training=training, drop_rng=drop_rng, denormalize=denormalize,
        )
        return (pred, taps) if return_taps else pred

    def predict(self, inputs: np.ndarray, denormalize: bool = True) -> np.ndarray:
        """Forecast a (B, L) stack of raw input windows; eval mode, no graph."""
        batch = build_patch_batch(
            np.atleast_2d(np.asarray(inputs, dtype=np.float64)),
            self.config.patch_config, eps=self.config.norm_eps,
        )
        with no_grad():
            return self.forward(batch, training=False, denormalize=denormalize).data

    def taps_for(self, window: np.ndarray) -> bb.LayerTaps:
        """Layer taps of one raw input window (diagnostics)."""
        batch = build_patch_batch(
            np.asarray(window, dtype=np.float64)[None, :],
            self.config.patch_config, eps=self.config.norm_eps,
        )
        with no_grad():
            return bb.forward(batch.patches, self.backbone, training=False)

    def n_params(self) -> int:
        return self.params.n_params()

    def n_trainable(self) -> int:
        return self.params.n_trainable()

    def hash_params(self) -> dict[str, str]:
        return self.params.hash_values()


def build_model(cfg: ModelConfig, horizon: int, rng: np.random.Generator) -> ForecastModel:
    """Initialize all components; consumption order keeps the backbone and
    mixers identical across horizons built from the same generator state."""
    if horizon < 1:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    backbone_state = bb.init_backbone(cfg.backbone_config(), rng)
    d_hidden = cfg.d_hidden or cfg.d_model
    variant = mx.FusionVariant(cfg.fusion)
    fusion = mx.FusionParams(
        variant=variant,
        selection=mx.LayerSelection(cfg.layer_selection),
        local_tap=cfg.local_tap,
        local_mixer=mx.init_mixer(cfg.d_model, d_hidden, rng, cfg.use_bias, cfg.dropout),
        global_mixer=mx.init_mixer(cfg.d_model, d_hidden, rng, cfg.use_bias, cfg.dropout),
    )
    if variant is mx.FusionVariant.CROSS:
        fusion.local_cross = mx.init_cross(cfg.d_model, rng)
        fusion.global_cross = mx.init_cross(cfg.d_model, rng)
    fusion.head = mx.init_head(cfg.n_patches, cfg.d_model, horizon, rng, cfg.use_bias)

    params = ParamSet()
    params.adopt("backbone", backbone_state.params)
    mx.register_mixer(params, "local_mixer", fusion.local_mixer)
    mx.register_mixer(params, "global_mixer", fusion.global_mixer)
    if fusion.local_cross is not None:
        mx.register_cross(params, "local_cross", fusion.local_cross)
        mx.register_cross(params, "global_cross", fusion.global_cross)
    mx.register_head(params, "head", fusion.head)

    scope_count = bb.apply_freeze(backbone_state, bb.FreezePolicy(cfg.freeze_policy))
    return ForecastModel(
        config=cfg,
        horizon=horizon,
        backbone=backbone_state,
        fusion=fusion,
        params=params,
        backbone_trainable=scope_count,
    )


def build_for_seed(cfg: ModelConfig, horizon: int, seed: int) -> tuple[ForecastModel, RunRng]:
    rng = RunRng.from_seed(seed)
    return build_model(cfg, horizon, rng.init), rng


def save_model(model: ForecastModel, path: str | Path) -> None:
    bb.write_param_file(model.params, path)


def load_model(cfg: ModelConfig, horizon: int, path: str | Path) -> ForecastModel:
    """Rebuild the layout from config, then fill every tensor from file."""
    model = build_model(cfg, horizon, np.random.default_rng(0))
    bb.load_into(model.params, bb.read_param_file(path), path)
    return model
