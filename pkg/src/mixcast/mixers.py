"""Local and global feature mixers, fusion variants, the projection head,
and cosine-similarity diagnostics over the layer taps.

Each mixer is a residual MLP over the concatenation of the patch embedding
with one tap: ``x + Dropout(W2 . relu(W1 . [x || tap]))``, so zeroing W2
(and its bias) makes the branch an exact identity.  The two branch outputs
are summed, flattened patch-major, projected to the horizon, and the
per-window normalization statistics invert the prediction back to raw scale.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .backbone import LayerTaps
from .errors import ConfigError, DimensionError
from .numerics import (
    ParamSet,
    Tensor,
    add,
    average,
    concat_last,
    dropout,
    linear,
    mul,
    relu,
    reshape,
    softmax_attention,
)
from .preprocess import PatchBatch


class FusionVariant(str, Enum):
    MIXER = "mixer"
    ADD = "add"
    CROSS = "cross"
    NONE = "none"


class LayerSelection(str, Enum):
    BOUNDARY = "boundary"          # local tap index + normalized deepest tap
    HALF_AVERAGE = "half_average"  # mean of first-half taps / mean of the rest
    LOCAL_ONLY = "local_only"
    GLOBAL_ONLY = "global_only"


@dataclass
class MixerParams:
    """Residual MLP weights: input width is 2*d_model (embedding || tap)."""

    w1: Tensor
    b1: Tensor | None
    w2: Tensor
    b2: Tensor | None
    dropout_rate: float = 0.1


@dataclass
class CrossAttnParams:
    """Single-head alignment attention (query: embedding, key/value: tap)."""

    wq: Tensor
    wk: Tensor
    wv: Tensor


@dataclass
class HeadParams:
    """Flattened-representation projection onto the horizon."""

    w: Tensor                 # (n_patches * d_model, horizon)
    b: Tensor | None


def init_mixer(d_model: int, d_hidden: int, rng: np.random.Generator,
               use_bias: bool = True, dropout_rate: float = 0.1) -> MixerParams:
    return MixerParams(
        w1=Tensor(rng.normal(0.0, 0.02, size=(2 * d_model, d_hidden))),
        b1=Tensor(np.zeros(d_hidden)) if use_bias else None,
        w2=Tensor(rng.normal(0.0, 0.02, size=(d_hidden, d_model))),
        b2=Tensor(np.zeros(d_model)) if use_bias else None,
        dropout_rate=dropout_rate,
    )


def init_cross(d_model: int, rng: np.random.Generator) -> CrossAttnParams:
    return CrossAttnParams(
        wq=Tensor(rng.normal(0.0, 0.02, size=(d_model, d_model))),
        wk=Tensor(rng.normal(0.0, 0.02, size=(d_model, d_model))),
        wv=Tensor(rng.normal(0.0, 0.02, size=(d_model, d_model))),
    )


def init_head(n_patches: int, d_model: int, horizon: int, rng: np.random.Generator,
              use_bias: bool = True) -> HeadParams:
    return HeadParams(
        w=Tensor(rng.normal(0.0, 0.02, size=(n_patches * d_model, horizon))),
        b=Tensor(np.zeros(horizon)) if use_bias else None,
    )


def register_mixer(params: ParamSet, prefix: str, m: MixerParams) -> None:
    params.add(f"{prefix}.w1", m.w1)
    if m.b1 is not None:
        params.add(f"{prefix}.b1", m.b1)
    params.add(f"{prefix}.w2", m.w2)
    if m.b2 is not None:
        params.add(f"{prefix}.b2", m.b2)


def register_cross(params: ParamSet, prefix: str, c: CrossAttnParams) -> None:
    params.add(f"{prefix}.wq", c.wq)
    params.add(f"{prefix}.wk", c.wk)
    params.add(f"{prefix}.wv", c.wv)


def register_head(params: ParamSet, prefix: str, h: HeadParams) -> None:
    params.add(f"{prefix}.w", h.w)
    if h.b is not None:
        params.add(f"{prefix}.b", h.b)


def mix(x_tilde: Tensor, tap: Tensor, params: MixerParams, training: bool = False,
        drop_rng: np.random.Generator | None = None) -> Tensor:
    """Residual MLP alignment of one tap with the patch embedding."""
    if x_tilde.shape != tap.shape:
        raise DimensionError(f"mix: embedding {x_tilde.shape} vs tap {tap.shape}")
    hidden = relu(linear(concat_last(x_tilde, tap), params.w1, params.b1))
    out = linear(hidden, params.w2, params.b2)
    return add(x_tilde, dropout(out, params.dropout_rate, training, drop_rng))


def cross_align(x_tilde: Tensor, tap: Tensor, params: CrossAttnParams) -> Tensor:
    """Residual single-head attention: query from the embedding, key/value
    from the tap."""
    q = linear(x_tilde, params.wq)
    k = linear(tap, params.wk)
    v = linear(tap, params.wv)
    return add(x_tilde, softmax_attention(q, k, v, causal=False))


@dataclass
class FusionParams:
    """Everything after the backbone: variant, tap selection, branch
    parameters, and the projection head."""

    variant: FusionVariant = FusionVariant.MIXER
    selection: LayerSelection = LayerSelection.BOUNDARY
    local_tap: int = 1
    local_mixer: MixerParams | None = None
    global_mixer: MixerParams | None = None
    local_cross: CrossAttnParams | None = None
    global_cross: CrossAttnParams | None = None
    head: HeadParams | None = None


def select_features(taps: LayerTaps, selection: LayerSelection,
                    local_tap: int) -> tuple[Tensor | None, Tensor | None]:
    """Resolve the (local, global) feature pair from the taps."""
    n_blocks = len(taps.hidden) - 1
    if not 0 <= local_tap <= n_blocks:
        raise ConfigError(f"local tap {local_tap} out of range 0..{n_blocks}")
    if selection in (LayerSelection.BOUNDARY, LayerSelection.LOCAL_ONLY,
                     LayerSelection.GLOBAL_ONLY):
        local = taps.hidden[local_tap]
        glob = taps.final if taps.final is not None else taps.hidden[-1]
    else:  # HALF_AVERAGE over block outputs (tap 0 precedes any block)
        if n_blocks < 1:
            raise ConfigError("half-average selection needs at least one block")
        half = math.ceil(n_blocks / 2)
        local = average(taps.hidden[1:half + 1])
        glob = average(taps.hidden[half + 1:]) if half < n_blocks else taps.hidden[-1]
    if selection is LayerSelection.LOCAL_ONLY:
        return local, None
    if selection is LayerSelection.GLOBAL_ONLY:
        return None, glob
    return local, glob


def _align(x_tilde: Tensor, tap: Tensor, variant: FusionVariant,
           mixer: MixerParams | None, cross: CrossAttnParams | None,
           training: bool, drop_rng) -> Tensor:
    if variant is FusionVariant.MIXER:
        return mix(x_tilde, tap, mixer, training, drop_rng)
    if variant is FusionVariant.ADD:
        return add(x_tilde, tap)
    if variant is FusionVariant.CROSS:
        return cross_align(x_tilde, tap, cross)
    return tap  # NONE: the raw tap is the branch output


def fuse_and_project(x_tilde: Tensor, taps: LayerTaps, fusion: FusionParams,
                     batch: PatchBatch | None, training: bool = False,
                     drop_rng: np.random.Generator | None = None,
                     denormalize: bool = True) -> Tensor:
    """Align the selected taps with the embedding, sum the branches, flatten
    patch-major, project to the horizon, and invert the window normalization."""
    local, glob = select_features(taps, fusion.selection, fusion.local_tap)
    branches = []
    if local is not None:
        branches.append(_align(x_tilde, local, fusion.variant,
                               fusion.local_mixer, fusion.local_cross, training, drop_rng))
    if glob is not None:
        branches.append(_align(x_tilde, glob, fusion.variant,
                               fusion.global_mixer, fusion.global_cross, training, drop_rng))
    fused = branches[0] if len(branches) == 1 else add(branches[0], branches[1])
    bsz, n_p, d = fused.shape
    flat = reshape(fused, (bsz, n_p * d))
    pred = linear(flat, fusion.head.w, fusion.head.b)
    if denormalize and batch is not None:
        scale = Tensor(batch.scale[:, None])
        mu = Tensor(batch.mu[:, None])
        pred = add(mul(pred, scale), mu)
    return pred


# ---------------------------------------------------------------------------
# similarity diagnostics
# ---------------------------------------------------------------------------


@dataclass
class SimilarityMatrix:
    """Pairwise cosine similarity between patch hidden vectors of one layer."""

    layer: int
    values: np.ndarray               # (N_p, N_p), entries in [-1, 1], unit diagonal
    zero_rows: list[int] = field(default_factory=list)


def similarity_matrices(taps: LayerTaps) -> list[SimilarityMatrix]:
    """One matrix per tap for a single-window pass (batch size 1).  Zero
    hidden vectors get similarity 0 against everything, diagonal forced to 1,
    and are flagged."""
    out = []
    for layer, tap in enumerate(taps.hidden):
        h = tap.data
        if h.ndim == 3:
            if h.shape[0] != 1:
                raise DimensionError(f"similarity needs a single window, got batch {h.shape[0]}")
            h = h[0]
        norms = np.linalg.norm(h, axis=1)
        zero = np.where(norms == 0.0)[0]
        safe = np.where(norms == 0.0, 1.0, norms)
        unit = h / safe[:, None]
        m = np.clip(unit @ unit.T, -1.0, 1.0)
        m[zero, :] = 0.0
        m[:, zero] = 0.0
        np.fill_diagonal(m, 1.0)
        out.append(SimilarityMatrix(layer=layer, values=m, zero_rows=zero.tolist()))
    return out


def write_similarity_csv(matrices: list[SimilarityMatrix], out_dir: str | Path) -> list[Path]:
    """One file per layer: header p0..p{N_p-1}, then N_p rows of reals."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for m in matrices:
        path = out_dir / f"sim_layer_{m.layer}.csv"
        n = m.values.shape[0]
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"p{i}" for i in range(n)])
            for row in m.values:
                writer.writerow([f"{v:.12g}" for v in row])
        paths.append(path)
    return paths
