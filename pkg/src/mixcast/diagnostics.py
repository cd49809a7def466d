"""Verification harnesses: end-to-end gradient checking and layer probes.

Central finite differences are only meaningful where the loss is smooth in an
``h``-neighborhood.  The one non-smooth spot in the model is the mixers' ReLU,
whose pre-activations cluster near zero under fresh initialization, so the
check setup shifts the mixers' first-layer biases off the kink and then
asserts the realized margin.  The analytic gradient path is untouched; this
only conditions the point at which it is probed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backbone as bb
from .errors import HarnessError
from .model import ForecastModel, ModelConfig, build_model
from .numerics import GradCheckResult, Tensor, concat_last, grad_check, mse_loss, no_grad
from .preprocess import PatchBatch, build_patch_batch

#: shift applied to mixer first-layer biases before a finite-difference check
KINK_BIAS_SHIFT = 0.25
#: required distance of every ReLU pre-activation from zero, in units of h
KINK_MARGIN_FACTOR = 50.0


def tiny_check_config() -> ModelConfig:
    """Two blocks, width 16, six patches: small enough to probe every scalar."""
    return ModelConfig(
        input_length=24, patch_length=8, patch_stride=4, max_patches=6,
        n_blocks=2, d_model=16, n_heads=4, d_ff=32, dropout=0.0,
    )


def relu_kink_margin(model: ForecastModel, batch: PatchBatch) -> float:
    """Smallest |pre-activation| across both mixers for this batch."""
    with no_grad():
        taps = bb.forward(batch.patches, model.backbone, training=False)
        margin = np.inf
        pairs = (
            (model.fusion.local_mixer, taps.hidden[model.fusion.local_tap]),
            (model.fusion.global_mixer, taps.final),
        )
        for mixer, tap in pairs:
            if mixer is None or tap is None:
                continue
            pre = concat_last(taps.x_tilde, tap).data @ mixer.w1.data
            if mixer.b1 is not None:
                pre = pre + mixer.b1.data
            margin = min(margin, float(np.min(np.abs(pre))))
    return margin


@dataclass
class CheckSetup:
    model: ForecastModel
    batch: PatchBatch
    target: Tensor


def prepare_check(cfg: ModelConfig | None = None, horizon: int = 8, seed: int = 0,
                  batch_size: int = 2, h: float = 1e-4) -> CheckSetup:
    """Build a random model plus fixed inputs conditioned for a valid check."""
    cfg = cfg or tiny_check_config()
    model = build_model(cfg, horizon, np.random.default_rng(seed))
    data_rng = np.random.default_rng(seed + 1)
    windows = data_rng.normal(size=(batch_size, cfg.input_length)) * 2.0 + 1.0
    batch = build_patch_batch(windows, cfg.patch_config, eps=cfg.norm_eps)
    for mixer in (model.fusion.local_mixer, model.fusion.global_mixer):
        if mixer is not None and mixer.b1 is not None:
            mixer.b1.data += KINK_BIAS_SHIFT
    margin = relu_kink_margin(model, batch)
    if margin < KINK_MARGIN_FACTOR * h:
        raise HarnessError(
            f"ReLU pre-activations too close to the kink for a valid check "
            f"(margin {margin:.2e} < {KINK_MARGIN_FACTOR * h:.2e})"
        )
    target = Tensor(data_rng.normal(size=(batch_size, horizon)))
    return CheckSetup(model=model, batch=batch, target=target)


def run_gradient_check(cfg: ModelConfig | None = None, horizon: int = 8, seed: int = 0,
                       h: float = 1e-4) -> GradCheckResult:
    """Finite-difference check of every trainable scalar of a small model."""
    setup = prepare_check(cfg, horizon=horizon, seed=seed, h=h)

    def loss():
        return mse_loss(setup.model.forward(setup.batch, training=False), setup.target)

    return grad_check(loss, setup.model.params, h=h)
