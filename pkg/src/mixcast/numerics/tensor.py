"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation records an analytic backward closure on its
output; calling ``backward()`` on a scalar walks the graph in reverse
topological order and accumulates gradients into the leaves that require
them.  Arrays are plain row-major numpy ndarrays, double precision on the
reference path (single precision behind the ``dtype`` argument; gradient
work always runs in double).
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigError, DimensionError, NumericalError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """n-dimensional real array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def assert_finite(self, context: str = "tensor") -> None:
        if not np.all(np.isfinite(self.data)):
            raise NumericalError(f"non-finite values in {context}")

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data, dtype=np.float64)

    def backward(self) -> None:
        """Reverse-mode pass from a scalar output."""
        if self.data.size != 1:
            raise DimensionError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # Operator sugar; the named functions below are the real surface.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    """Create an op output; records parents only while gradients are enabled."""
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc
    out = _node(data, (a, b))
    if out.requires_grad:
        def backward():
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(out.grad, b.shape))
        out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc
    out = _node(data, (a, b))
    if out.requires_grad:
        def backward():
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(out.grad * a.data, b.shape))
        out._backward = backward
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = _node(a.data * s, (a,))
    if out.requires_grad:
        def backward():
            a.accumulate_grad(out.grad * s)
        out._backward = backward
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = _node(a.data.reshape(shape), (a,))
    if out.requires_grad:
        def backward():
            a.accumulate_grad(out.grad.reshape(a.shape))
        out._backward = backward
    return out


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = _node(np.ascontiguousarray(a.data.transpose(axes)), (a,))
    if out.requires_grad:
        inverse = tuple(np.argsort(axes))
        def backward():
            a.accumulate_grad(out.grad.transpose(inverse))
        out._backward = backward
    return out


def narrow(a: Tensor, start: int, length: int) -> Tensor:
    """First-axis slice a[start:start+length] with scatter backward."""
    if start < 0 or start + length > a.shape[0]:
        raise DimensionError(
            f"narrow: rows [{start}, {start + length}) out of range for shape {a.shape}"
        )
    out = _node(a.data[start:start + length].copy(), (a,))
    if out.requires_grad:
        def backward():
            g = np.zeros_like(a.data, dtype=np.float64)
            g[start:start + length] = out.grad
            a.accumulate_grad(g)
        out._backward = backward
    return out


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    """Join two tensors along the last axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_last: leading shapes differ, {a.shape} vs {b.shape}")
    split = a.shape[-1]
    out = _node(np.concatenate([a.data, b.data], axis=-1), (a, b))
    if out.requires_grad:
        def backward():
            if a.requires_grad:
                a.accumulate_grad(out.grad[..., :split])
            if b.requires_grad:
                b.accumulate_grad(out.grad[..., split:])
        out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    out = _node(np.maximum(x.data, 0.0), (x,))
    if out.requires_grad:
        mask = x.data > 0
        def backward():
            x.accumulate_grad(out.grad * mask)
        out._backward = backward
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU (GPT-2 convention)."""
    inner = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(inner)
    out = _node(0.5 * x.data * (1.0 + t), (x,))
    if out.requires_grad:
        def backward():
            d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
            local = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t ** 2) * d_inner
            x.accumulate_grad(out.grad * local)
        out._backward = backward
    return out


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales survivors at train time, exact identity at eval."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = _node(x.data * keep, (x,))
    if out.requires_grad:
        def backward():
            x.accumulate_grad(out.grad * keep)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.  Supports 2-D x 2-D, batched-left x 2-D (weight
    application), and equal-batched operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise DimensionError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    data = a.data @ b.data
    out = _node(data, (a, b))
    if out.requires_grad:
        def backward():
            g = out.grad
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                if b.data.ndim == 2 and a.data.ndim > 2:
                    k = a.shape[-1]
                    gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
                else:
                    gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
                b.accumulate_grad(gb)
        out._backward = backward
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the last axis, scaled and shifted."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma/beta must have shape ({d},), got {gamma.shape}/{beta.shape}"
        )
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean) * inv_std
    out = _node(x_hat * gamma.data + beta.data, (x, gamma, beta))
    if out.requires_grad:
        def backward():
            g = out.grad
            if gamma.requires_grad:
                gamma.accumulate_grad((g * x_hat).reshape(-1, d).sum(axis=0))
            if beta.requires_grad:
                beta.accumulate_grad(g.reshape(-1, d).sum(axis=0))
            if x.requires_grad:
                gy = g * gamma.data
                m1 = gy.mean(axis=-1, keepdims=True)
                m2 = (gy * x_hat).mean(axis=-1, keepdims=True)
                x.accumulate_grad((gy - m1 - x_hat * m2) * inv_std)
        out._backward = backward
    return out


def softmax_attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False) -> Tensor:
    """Scaled dot-product attention over the last two axes (positions x head
    dim); any leading axes are batch/head axes.  Scale is 1/sqrt(head dim)."""
    if not (q.shape == k.shape == v.shape):
        raise DimensionError(
            f"softmax_attention: q/k/v shapes must match, got {q.shape}/{k.shape}/{v.shape}"
        )
    if q.data.ndim < 2:
        raise DimensionError(f"softmax_attention: need at least 2 axes, got shape {q.shape}")
    p, dh = q.shape[-2], q.shape[-1]
    inv_scale = 1.0 / math.sqrt(dh)
    scores = (q.data @ np.swapaxes(k.data, -1, -2)) * inv_scale
    if causal:
        mask = np.triu(np.ones((p, p), dtype=bool), k=1)
        scores = np.where(mask, -np.inf, scores)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    probs = e / e.sum(axis=-1, keepdims=True)
    out = _node(probs @ v.data, (q, k, v))
    if out.requires_grad:
        def backward():
            g = out.grad
            if v.requires_grad:
                v.accumulate_grad(np.swapaxes(probs, -1, -2) @ g)
            if q.requires_grad or k.requires_grad:
                d_probs = g @ np.swapaxes(v.data, -1, -2)
                d_scores = probs * (d_probs - (d_probs * probs).sum(axis=-1, keepdims=True))
                if q.requires_grad:
                    q.accumulate_grad((d_scores @ k.data) * inv_scale)
                if k.requires_grad:
                    k.accumulate_grad((np.swapaxes(d_scores, -1, -2) @ q.data) * inv_scale)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# losses / reductions
# ---------------------------------------------------------------------------


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: shapes differ, {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = _node(np.asarray(np.mean(diff ** 2)), (pred, target))
    if out.requires_grad:
        def backward():
            g = out.grad * 2.0 * diff / diff.size
            if pred.requires_grad:
                pred.accumulate_grad(g)
            if target.requires_grad:
                target.accumulate_grad(-g)
        out._backward = backward
    return out


def mean_all(x: Tensor) -> Tensor:
    out = _node(np.asarray(np.mean(x.data)), (x,))
    if out.requires_grad:
        def backward():
            x.accumulate_grad(np.full(x.shape, out.grad.reshape(()) / x.size))
        out._backward = backward
    return out


def average(tensors: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of same-shaped tensors."""
    if not tensors:
        raise DimensionError("average: empty tensor list")
    acc = tensors[0]
    for t in tensors[1:]:
        acc = add(acc, t)
    return scale(acc, 1.0 / len(tensors))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b broadcast over leading axes)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out
