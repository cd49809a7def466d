"""Adam optimizer contracts: bias correction, freeze safety, grad clearing."""

import numpy as np
import pytest

from mixcast.errors import StateError
from mixcast.numerics import AdamState, ParamSet, Tensor, adam_step, mse_loss


def test_zero_gradients_leave_params_unchanged():
    ps = ParamSet()
    ps.add("w", Tensor([1.0, -2.0, 3.0]))
    state = AdamState.for_params(ps, lr=0.1)
    ps.zero_grads()
    adam_step(ps, state)
    np.testing.assert_array_equal(ps["w"].data, [1.0, -2.0, 3.0])
    assert state.step == 1


def test_first_step_matches_closed_form():
    # With grad g and bias correction, step 1 moves by lr * g/|g| (eps-limited).
    ps = ParamSet()
    ps.add("w", Tensor([5.0]))
    state = AdamState.for_params(ps, lr=0.1, eps=1e-8)
    ps["w"].grad = np.array([1.0])
    adam_step(ps, state)
    # m_hat = g, v_hat = g^2 -> delta = lr * g / (|g| + eps) ~= lr
    expected = 5.0 - 0.1 * (1.0 / (1.0 + 1e-8))
    np.testing.assert_allclose(ps["w"].data, [expected], rtol=1e-12)


def test_two_steps_follow_moment_recurrences():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    ps = ParamSet()
    ps.add("w", Tensor([0.5]))
    state = AdamState.for_params(ps, lr=lr, betas=(b1, b2), eps=eps)

    w, m, v = 0.5, 0.0, 0.0
    for t, g in enumerate([2.0, -1.0], start=1):
        ps["w"].grad = np.array([g])
        adam_step(ps, state)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    np.testing.assert_allclose(ps["w"].data, [w], rtol=1e-12)
    assert state.step == 2


def test_frozen_tensor_untouched_even_with_grad_set():
    ps = ParamSet()
    ps.add("live", Tensor([1.0]))
    ps.add("ice", Tensor([4.0]), trainable=False)
    state = AdamState.for_params(ps, lr=0.5)
    ps["live"].grad = np.array([1.0])
    ps["ice"].grad = np.array([100.0])  # artificially set; must be ignored
    before = ps["ice"].data.tobytes()
    adam_step(ps, state)
    assert ps["ice"].data.tobytes() == before


def test_missing_gradient_raises_state_error():
    ps = ParamSet()
    ps.add("w", Tensor([1.0]))
    state = AdamState.for_params(ps)
    with pytest.raises(StateError, match="missing gradient.*w"):
        adam_step(ps, state)


def test_gradients_cleared_after_step():
    ps = ParamSet()
    ps.add("w", Tensor([1.0]))
    state = AdamState.for_params(ps)
    ps["w"].grad = np.array([1.0])
    adam_step(ps, state)
    assert ps["w"].grad is None


def test_stale_adam_state_detected():
    ps = ParamSet()
    ps.add("w", Tensor([1.0]))
    ps.add("u", Tensor([2.0]))
    state = AdamState.for_params(ps)
    ps.set_trainable("u", False)
    ps.zero_grads()
    with pytest.raises(StateError, match="out of sync"):
        adam_step(ps, state)


def test_backprop_never_reaches_frozen_entries():
    ps = ParamSet()
    ps.add("a", Tensor([1.0, 2.0]))
    ps.add("b", Tensor([3.0, 4.0]), trainable=False)
    loss = mse_loss(ps["a"] + ps["b"], Tensor([0.0, 0.0]))
    loss.backward()
    assert ps["a"].grad is not None
    assert ps["b"].grad is None


def test_paramset_duplicate_name_rejected():
    ps = ParamSet()
    ps.add("w", Tensor([1.0]))
    with pytest.raises(StateError, match="duplicate"):
        ps.add("w", Tensor([2.0]))


def test_paramset_counts_and_order():
    ps = ParamSet()
    ps.add("b", Tensor(np.zeros((2, 3))))
    ps.add("a", Tensor(np.zeros(4)), trainable=False)
    assert ps.names() == ["b", "a"]  # insertion order, deterministic
    assert ps.n_params() == 10
    assert ps.n_trainable() == 6
