"""Named parameter collections and the Adam optimizer."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import StateError
from .tensor import Tensor


class ParamSet:
    """Ordered map from dotted parameter names to tensors.

    The trainable flag lives on the tensor itself (``requires_grad``), so a
    tensor shared between two ParamSet views has one consistent flag, and a
    frozen entry never accumulates gradient during backprop.
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise StateError(f"duplicate parameter name: {name}")
        tensor.requires_grad = trainable
        self._entries[name] = tensor
        return tensor

    def adopt(self, prefix: str, other: "ParamSet") -> None:
        """Register another set's tensors under ``prefix.`` (shared, not copied)."""
        for name, t in other.items():
            if f"{prefix}.{name}" in self._entries:
                raise StateError(f"duplicate parameter name: {prefix}.{name}")
            self._entries[f"{prefix}.{name}"] = t

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def is_trainable(self, name: str) -> bool:
        return self._entries[name].requires_grad

    def set_trainable(self, name: str, flag: bool) -> None:
        self._entries[name].requires_grad = flag

    def trainable_items(self):
        return [(n, t) for n, t in self._entries.items() if t.requires_grad]

    def n_params(self) -> int:
        return sum(t.size for t in self._entries.values())

    def n_trainable(self) -> int:
        return sum(t.size for _, t in self.trainable_items())

    def zero_grads(self) -> None:
        """Zero-fill trainable gradient slots; frozen slots stay empty."""
        for t in self._entries.values():
            if t.requires_grad:
                t.zero_grad()
            else:
                t.grad = None

    def clear_grads(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def hash_values(self, predicate=None) -> dict[str, str]:
        """SHA-256 of each tensor's raw bytes (byte-level change detection)."""
        out = {}
        for name, t in self._entries.items():
            if predicate is None or predicate(name):
                out[name] = hashlib.sha256(np.ascontiguousarray(t.data).tobytes()).hexdigest()
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._entries.items()}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self._entries):
            raise StateError("snapshot names do not match parameter set")
        for name, arr in values.items():
            self._entries[name].data = arr.copy()


@dataclass
class AdamState:
    """Adam moments for the trainable entries of one ParamSet."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamSet, lr: float = 1e-4,
                   betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> "AdamState":
        state = cls(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        for name, t in params.trainable_items():
            state.m[name] = np.zeros_like(t.data, dtype=np.float64)
            state.v[name] = np.zeros_like(t.data, dtype=np.float64)
        return state


def adam_step(params: ParamSet, state: AdamState) -> None:
    """One bias-corrected Adam update over the trainable entries.

    Gradients are cleared afterwards; frozen tensors are never touched.
    """
    trainable = params.trainable_items()
    names = {n for n, _ in trainable}
    if names != set(state.m):
        missing = sorted(names - set(state.m))
        extra = sorted(set(state.m) - names)
        raise StateError(
            f"Adam state out of sync with trainable set (missing={missing}, stale={extra})"
        )
    for name, t in trainable:
        if t.grad is None:
            raise StateError(f"missing gradient on trainable parameter {name}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, t in trainable:
        g = t.grad
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        t.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    params.clear_grads()
