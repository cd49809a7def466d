"""Patch-token embedding, learnable positional embedding, a stack of pre-norm
transformer blocks with a hidden-state tap after every block, selective
freezing of the backbone, and binary weight-file I/O.

Tap 0 is the post-embedding state (token embedding plus positional rows);
tap n is the raw output of block n, so recomputing block n on tap n-1
reproduces tap n exactly.  A final layer norm over the deepest tap is kept
alongside the taps for consumers that want the normalized terminal state.

The token embedding adapts raw patches into the block width and therefore
always stays trainable; freeze policies govern the rest of the stack (the
pre-trained analog): positional embedding, per-block tensors, final norm.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, WeightFormatError
from .numerics import (
    ParamSet,
    Tensor,
    add,
    dropout,
    gelu,
    layer_norm,
    linear,
    narrow,
    reshape,
    softmax_attention,
    transpose,
)

WEIGHT_MAGIC = b"LOGOW"
WEIGHT_VERSION = 1

LN_EPS = 1e-5


class FreezePolicy(str, Enum):
    LN_PE = "ln_pe"   # layer norms + positional embedding trainable
    LN = "ln"         # layer norms only
    PE = "pe"         # positional embedding only
    FULL = "full"     # every backbone tensor trainable
    NONE = "none"     # backbone fully frozen


@dataclass
class BackboneConfig:
    n_blocks: int = 6
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    patch_length: int = 16
    max_patches: int = 64
    causal: bool = True
    dropout: float = 0.1
    ln_scope: str = "all"  # "all" or "final_only"

    def __post_init__(self):
        if self.n_blocks < 0:
            raise ConfigError(f"n_blocks must be non-negative, got {self.n_blocks}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.ln_scope not in ("all", "final_only"):
            raise ConfigError(f"ln_scope must be 'all' or 'final_only', got {self.ln_scope!r}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def param_template(cfg: BackboneConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) pairs; the single source of truth for layout."""
    d, ff, p = cfg.d_model, cfg.d_ff, cfg.patch_length
    names: list[tuple[str, tuple[int, ...]]] = [
        ("token_embed.weight", (p, d)),
        ("token_embed.bias", (d,)),
        ("pos_embed", (cfg.max_patches, d)),
    ]
    for i in range(cfg.n_blocks):
        b = f"block.{i}"
        names += [
            (f"{b}.ln1.gamma", (d,)), (f"{b}.ln1.beta", (d,)),
            (f"{b}.attn.wq", (d, d)), (f"{b}.attn.bq", (d,)),
            (f"{b}.attn.wk", (d, d)), (f"{b}.attn.bk", (d,)),
            (f"{b}.attn.wv", (d, d)), (f"{b}.attn.bv", (d,)),
            (f"{b}.attn.wo", (d, d)), (f"{b}.attn.bo", (d,)),
            (f"{b}.ln2.gamma", (d,)), (f"{b}.ln2.beta", (d,)),
            (f"{b}.ffn.w1", (d, ff)), (f"{b}.ffn.b1", (ff,)),
            (f"{b}.ffn.w2", (ff, d)), (f"{b}.ffn.b2", (d,)),
        ]
    names += [("final_ln.gamma", (d,)), ("final_ln.beta", (d,))]
    return names


def _init_value(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if name.endswith(("gamma",)):
        return np.ones(shape)
    if name.endswith(("beta", "bias", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
        return np.zeros(shape)
    return rng.normal(0.0, 0.02, size=shape)


@dataclass
class BackboneState:
    """All backbone tensors in one named, ordered parameter set."""

    config: BackboneConfig
    params: ParamSet


def init_backbone(cfg: BackboneConfig, rng: np.random.Generator) -> BackboneState:
    params = ParamSet()
    for name, shape in param_template(cfg):
        params.add(name, Tensor(_init_value(name, shape, rng)))
    return BackboneState(config=cfg, params=params)


def in_policy_scope(name: str) -> bool:
    """The freeze policy governs everything except the input adapter."""
    return not name.startswith("token_embed.")


def _is_ln(name: str, scope: str) -> bool:
    if name.startswith("final_ln."):
        return True
    return scope == "all" and (".ln1." in name or ".ln2." in name)


def apply_freeze(state: BackboneState, policy: FreezePolicy) -> int:
    """Set trainable flags per policy; returns the count of trainable scalars
    within policy scope (the token embedding is always trainable and not
    counted here)."""
    policy = FreezePolicy(policy)
    scope = state.config.ln_scope
    count = 0
    for name, t in state.params.items():
        if not in_policy_scope(name):
            state.params.set_trainable(name, True)
            continue
        if policy is FreezePolicy.FULL:
            flag = True
        elif policy is FreezePolicy.NONE:
            flag = False
        elif policy is FreezePolicy.LN_PE:
            flag = _is_ln(name, scope) or name == "pos_embed"
        elif policy is FreezePolicy.LN:
            flag = _is_ln(name, scope)
        else:  # PE
            flag = name == "pos_embed"
        state.params.set_trainable(name, flag)
        if flag:
            count += t.size
    return count


@dataclass
class LayerTaps:
    """Hidden states of one forward pass: index 0 is the post-embedding
    state, index n the output of block n; ``final`` is the deepest tap after
    the final layer norm, ``x_tilde`` the token embedding before positional
    addition."""

    hidden: list[Tensor] = field(default_factory=list)
    x_tilde: Tensor | None = None
    final: Tensor | None = None

    def __len__(self) -> int:
        return len(self.hidden)


def embed(patches, state: BackboneState) -> Tensor:
    """Per-patch linear projection into the block width (no positional rows)."""
    x = patches if isinstance(patches, Tensor) else Tensor(np.asarray(patches, dtype=np.float64))
    cfg = state.config
    if x.shape[-1] != cfg.patch_length:
        raise DimensionError(
            f"patch width {x.shape[-1]} does not match token embedding input {cfg.patch_length}"
        )
    if x.shape[-2] > cfg.max_patches:
        raise DimensionError(
            f"{x.shape[-2]} patches exceed positional capacity {cfg.max_patches}"
        )
    return linear(x, state.params["token_embed.weight"], state.params["token_embed.bias"])


def run_block(state: BackboneState, index: int, h: Tensor, training: bool = False,
              drop_rng: np.random.Generator | None = None) -> Tensor:
    """Apply block ``index`` to a hidden state (pre-norm attention + FFN)."""
    cfg = state.config
    p = state.params
    b = f"block.{index}"
    bsz, n_p, d = h.shape
    heads, dh = cfg.n_heads, cfg.head_dim

    a = layer_norm(h, p[f"{b}.ln1.gamma"], p[f"{b}.ln1.beta"], eps=LN_EPS)
    q = linear(a, p[f"{b}.attn.wq"], p[f"{b}.attn.bq"])
    k = linear(a, p[f"{b}.attn.wk"], p[f"{b}.attn.bk"])
    v = linear(a, p[f"{b}.attn.wv"], p[f"{b}.attn.bv"])
    split_heads = lambda t: transpose(reshape(t, (bsz, n_p, heads, dh)), (0, 2, 1, 3))
    attn = softmax_attention(split_heads(q), split_heads(k), split_heads(v), causal=cfg.causal)
    merged = reshape(transpose(attn, (0, 2, 1, 3)), (bsz, n_p, d))
    proj = linear(merged, p[f"{b}.attn.wo"], p[f"{b}.attn.bo"])
    h = add(h, dropout(proj, cfg.dropout, training, drop_rng))

    n = layer_norm(h, p[f"{b}.ln2.gamma"], p[f"{b}.ln2.beta"], eps=LN_EPS)
    f = linear(gelu(linear(n, p[f"{b}.ffn.w1"], p[f"{b}.ffn.b1"])),
               p[f"{b}.ffn.w2"], p[f"{b}.ffn.b2"])
    return add(h, dropout(f, cfg.dropout, training, drop_rng))


def forward(patches, state: BackboneState, training: bool = False,
            drop_rng: np.random.Generator | None = None) -> LayerTaps:
    """Full stack forward, retaining every per-layer hidden state."""
    cfg = state.config
    x_tilde = embed(patches, state)
    n_p = x_tilde.shape[-2]
    h = add(x_tilde, narrow(state.params["pos_embed"], 0, n_p))
    h.assert_finite("backbone embedding")
    taps = LayerTaps(hidden=[h], x_tilde=x_tilde)
    for i in range(cfg.n_blocks):
        h = run_block(state, i, h, training=training, drop_rng=drop_rng)
        h.assert_finite(f"backbone block {i} output")
        taps.hidden.append(h)
    taps.final = layer_norm(
        taps.hidden[-1], state.params["final_ln.gamma"], state.params["final_ln.beta"], eps=LN_EPS
    )
    return taps


# ---------------------------------------------------------------------------
# weight-file I/O
# ---------------------------------------------------------------------------


def write_param_file(params: ParamSet, path: str | Path) -> None:
    """Serialize a parameter set: magic, version, manifest, then raw float64
    little-endian data in manifest order."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<H", WEIGHT_VERSION))
        fh.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.data.ndim))
            for dim in t.data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(struct.pack("<B", 1 if t.requires_grad else 0))
        for _, t in params.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def read_param_file(path: str | Path) -> list[tuple[str, tuple[int, ...], bool, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise WeightFormatError(f"weight file not found: {path}")
    blob = path.read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise WeightFormatError(f"{path}: truncated file (needed {pos + n} bytes, have {len(blob)})")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if take(len(WEIGHT_MAGIC)) != WEIGHT_MAGIC:
        raise WeightFormatError(f"{path}: bad magic, not a weight file")
    (version,) = struct.unpack("<H", take(2))
    if version != WEIGHT_VERSION:
        raise WeightFormatError(f"{path}: unsupported version {version}")
    (count,) = struct.unpack("<I", take(4))
    manifest = []
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(rank))
        (trainable,) = struct.unpack("<B", take(1))
        manifest.append((name, shape, bool(trainable)))
    records = []
    for name, shape, trainable in manifest:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(size * 8), dtype="<f8").reshape(shape).astype(np.float64)
        records.append((name, shape, trainable, arr))
    if pos != len(blob):
        raise WeightFormatError(f"{path}: {len(blob) - pos} trailing bytes after tensor data")
    return records


def load_into(params: ParamSet, records, path: str | Path = "<weights>") -> None:
    """Fill an existing parameter set from file records, enforcing an exact
    name/shape match."""
    expected = {name: t for name, t in params.items()}
    seen = set()
    for name, shape, trainable, arr in records:
        if name not in expected:
            raise WeightFormatError(f"{path}: unknown tensor {name!r} not in expected set")
        t = expected[name]
        if tuple(t.data.shape) != shape:
            raise WeightFormatError(
                f"{path}: tensor {name!r} has shape {shape}, expected {tuple(t.data.shape)}"
            )
        t.data = arr.copy()
        t.requires_grad = trainable
        seen.add(name)
    missing = sorted(set(expected) - seen)
    if missing:
        raise WeightFormatError(f"{path}: missing tensors {missing}")


def save_weights(state: BackboneState, path: str | Path) -> None:
    write_param_file(state.params, path)


def load_weights(path: str | Path, cfg: BackboneConfig) -> BackboneState:
    """Rebuild a backbone from file, validated against the expected layout."""
    state = BackboneState(config=cfg, params=ParamSet())
    for name, shape in param_template(cfg):
        state.params.add(name, Tensor(np.zeros(shape)))
    load_into(state.params, read_param_file(path), path)
    return state
