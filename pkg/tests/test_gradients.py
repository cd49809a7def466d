"""Analytic gradients vs central finite differences, op by op."""

import numpy as np
import pytest

from mixcast.errors import HarnessError
from mixcast.numerics import (
    ParamSet,
    Tensor,
    add,
    concat_last,
    dropout,
    gelu,
    grad_check,
    layer_norm,
    linear,
    matmul,
    mse_loss,
    mul,
    narrow,
    relu,
    reshape,
    softmax_attention,
    transpose,
)

TOL = 1e-6  # double precision, h=1e-4: tiny ops sit well below the 1e-4 budget


def check(build_loss, params, tol=TOL):
    result = grad_check(build_loss, params, h=1e-4)
    assert result.max_rel_error <= tol, (
        f"worst {result.worst_param}: {result.max_rel_error:.3e}"
    )
    return result


def make_params(rng, **shapes):
    ps = ParamSet()
    for name, shape in shapes.items():
        ps.add(name, Tensor(rng.normal(size=shape)))
    return ps


def test_linear_scalar_function():
    ps = ParamSet()
    ps.add("w", Tensor([2.0]))
    result = grad_check(lambda: mse_loss(3.0 * ps["w"], Tensor([0.0])), ps, h=1e-4)
    # f(w) = 9 w^2 -> f'(2) = 36; the check inspects the recorded analytic grad.
    assert result.max_rel_error <= 1e-8


def test_matmul_grads():
    rng = np.random.default_rng(0)
    ps = make_params(rng, a=(3, 4), b=(4, 2))
    target = Tensor(rng.normal(size=(3, 2)))
    check(lambda: mse_loss(matmul(ps["a"], ps["b"]), target), ps)


def test_matmul_batched_weight_grads():
    rng = np.random.default_rng(1)
    ps = make_params(rng, x=(2, 3, 4), w=(4, 5))
    target = Tensor(rng.normal(size=(2, 3, 5)))
    check(lambda: mse_loss(matmul(ps["x"], ps["w"]), target), ps)


def test_layer_norm_grads():
    rng = np.random.default_rng(2)
    ps = make_params(rng, x=(4, 6), gamma=(6,), beta=(6,))
    target = Tensor(rng.normal(size=(4, 6)))
    check(lambda: mse_loss(layer_norm(ps["x"], ps["gamma"], ps["beta"], eps=1e-5), target), ps)


@pytest.mark.parametrize("causal", [False, True])
def test_attention_grads(causal):
    rng = np.random.default_rng(3)
    ps = make_params(rng, q=(2, 3, 4), k=(2, 3, 4), v=(2, 3, 4))
    target = Tensor(rng.normal(size=(2, 3, 4)))
    check(
        lambda: mse_loss(softmax_attention(ps["q"], ps["k"], ps["v"], causal=causal), target),
        ps,
    )


def test_relu_gelu_grads():
    rng = np.random.default_rng(4)
    # Keep points away from the ReLU kink where FD is one-sided.
    ps = ParamSet()
    x = rng.normal(size=12)
    x[np.abs(x) < 0.05] += 0.2
    ps.add("x", Tensor(x))
    target = Tensor(rng.normal(size=12))
    check(lambda: mse_loss(relu(ps["x"]), target), ps)
    check(lambda: mse_loss(gelu(ps["x"]), target), ps)


def test_concat_mul_reshape_transpose_narrow_grads():
    rng = np.random.default_rng(5)
    ps = make_params(rng, a=(3, 2), b=(3, 4), c=(3, 6), p=(5, 6))
    target = Tensor(rng.normal(size=(2, 9)))

    def loss():
        joined = concat_last(ps["a"], ps["b"])          # (3, 6)
        scaled = mul(joined, ps["c"])                   # (3, 6)
        shifted = add(scaled, narrow(ps["p"], 1, 3))    # (3, 6)
        return mse_loss(reshape(transpose(shifted, (1, 0)), (2, 9)), target)

    check(loss, ps)


def test_bias_broadcast_grads():
    rng = np.random.default_rng(6)
    ps = make_params(rng, x=(2, 3, 4), w=(4, 5), b=(5,))
    target = Tensor(rng.normal(size=(2, 3, 5)))
    check(lambda: mse_loss(linear(ps["x"], ps["w"], ps["b"]), target), ps)


def test_frozen_params_skipped():
    rng = np.random.default_rng(7)
    ps = ParamSet()
    ps.add("live", Tensor(rng.normal(size=(2, 2))))
    ps.add("frozen", Tensor(rng.normal(size=(2, 2))), trainable=False)
    target = Tensor(rng.normal(size=(2, 2)))
    result = grad_check(
        lambda: mse_loss(add(ps["live"], ps["frozen"]), target), ps, h=1e-4
    )
    assert result.skipped == ["frozen"]
    assert "frozen" not in result.per_param
    assert result.max_rel_error <= TOL


def test_nondeterminism_detected():
    rng = np.random.default_rng(8)
    ps = ParamSet()
    ps.add("x", Tensor([1.0]))
    drop_rng = np.random.default_rng(9)

    def noisy():
        return mse_loss(
            dropout(ps["x"], 0.5, training=True, rng=drop_rng), Tensor([0.0])
        )

    with pytest.raises(HarnessError, match="deterministic"):
        grad_check(noisy, ps, h=1e-4)


def test_dropout_grad_with_fixed_mask():
    # A frozen mask makes dropout deterministic; gradient must carry the mask.
    rng = np.random.default_rng(10)
    ps = make_params(rng, x=(6, 6))
    target = Tensor(rng.normal(size=(6, 6)))

    class OneShot:
        """Replays one mask draw forever, so f is deterministic."""

        def __init__(self):
            self.draw = np.random.default_rng(11).random((6, 6))

        def random(self, shape):
            assert shape == self.draw.shape
            return self.draw

    fixed = OneShot()
    check(lambda: mse_loss(dropout(ps["x"], 0.4, training=True, rng=fixed), target), ps)
