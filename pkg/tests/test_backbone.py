"""Backbone contracts: embedding, taps, freeze policies, weight files."""

import numpy as np
import pytest

from mixcast.backbone import (
    BackboneConfig,
    FreezePolicy,
    apply_freeze,
    embed,
    forward,
    init_backbone,
    load_weights,
    param_template,
    run_block,
    save_weights,
)
from mixcast.errors import DimensionError, NumericalError, WeightFormatError
from mixcast.numerics import Tensor, no_grad


def tiny_config(**kw):
    base = dict(n_blocks=2, d_model=8, n_heads=2, d_ff=16, patch_length=4, max_patches=6,
                dropout=0.0)
    base.update(kw)
    return BackboneConfig(**base)


def make_state(seed=0, **kw):
    return init_backbone(tiny_config(**kw), np.random.default_rng(seed))


class TestEmbed:
    def test_zero_patches_give_bias_rows(self):
        state = make_state()
        out = embed(np.zeros((2, 3, 4)), state)
        bias = state.params["token_embed.bias"].data
        np.testing.assert_array_equal(out.data, np.broadcast_to(bias, (2, 3, 8)))

    def test_identity_projection(self):
        state = make_state(d_model=4, n_heads=2, patch_length=4)
        state.params["token_embed.weight"].data = np.eye(4)
        state.params["token_embed.bias"].data = np.zeros(4)
        patches = np.random.default_rng(1).normal(size=(1, 5, 4))
        np.testing.assert_array_equal(embed(patches, state).data, patches)

    def test_random_vs_loop_oracle(self):
        state = make_state()
        rng = np.random.default_rng(2)
        patches = rng.normal(size=(2, 3, 4))
        w = state.params["token_embed.weight"].data
        b = state.params["token_embed.bias"].data
        got = embed(patches, state).data
        for i in range(2):
            for j in range(3):
                want = np.array([patches[i, j] @ w[:, c] + b[c] for c in range(8)])
                np.testing.assert_allclose(got[i, j], want, rtol=1e-12)

    def test_capacity_error(self):
        state = make_state()
        with pytest.raises(DimensionError, match="capacity"):
            embed(np.zeros((1, 7, 4)), state)

    def test_patch_width_mismatch(self):
        state = make_state()
        with pytest.raises(DimensionError):
            embed(np.zeros((1, 3, 5)), state)


class TestForward:
    def test_zero_blocks_degenerate(self):
        state = make_state(n_blocks=0)
        taps = forward(np.zeros((1, 3, 4)), state)
        assert len(taps.hidden) == 1
        assert taps.final is not None

    def test_tap_count_and_shapes(self):
        state = make_state()
        taps = forward(np.random.default_rng(3).normal(size=(2, 5, 4)), state)
        assert len(taps.hidden) == 3  # embedding + 2 blocks
        assert all(t.shape == (2, 5, 8) for t in taps.hidden)
        assert taps.x_tilde.shape == (2, 5, 8)

    def test_tap_zero_is_embedding_plus_positions(self):
        state = make_state()
        patches = np.random.default_rng(4).normal(size=(2, 5, 4))
        taps = forward(patches, state)
        want = embed(patches, state).data + state.params["pos_embed"].data[:5]
        np.testing.assert_array_equal(taps.hidden[0].data, want)

    def test_recurrence_recomputes_each_tap(self):
        state = make_state()
        patches = np.random.default_rng(5).normal(size=(2, 5, 4))
        with no_grad():
            taps = forward(patches, state)
            for n in range(1, len(taps.hidden)):
                redo = run_block(state, n - 1, taps.hidden[n - 1])
                np.testing.assert_allclose(redo.data, taps.hidden[n].data, rtol=1e-12, atol=0)

    def test_deterministic_replay(self):
        patches = np.random.default_rng(6).normal(size=(1, 4, 4))
        a = forward(patches, make_state(seed=9))
        b = forward(patches, make_state(seed=9))
        for ta, tb in zip(a.hidden, b.hidden):
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_nan_input_names_failing_block(self):
        state = make_state()
        bad = np.zeros((1, 3, 4))
        state.params["block.1.ffn.w2"].data[0, 0] = np.nan
        with pytest.raises(NumericalError, match="block 1"):
            forward(bad, state)

    def test_dropout_only_in_training(self):
        state = make_state(dropout=0.5)
        patches = np.random.default_rng(7).normal(size=(1, 4, 4))
        a = forward(patches, state, training=False)
        b = forward(patches, state, training=False)
        np.testing.assert_array_equal(a.hidden[-1].data, b.hidden[-1].data)
        c = forward(patches, state, training=True, drop_rng=np.random.default_rng(1))
        assert not np.array_equal(a.hidden[-1].data, c.hidden[-1].data)


class TestFreeze:
    def test_none_freezes_whole_scope(self):
        state = make_state()
        assert apply_freeze(state, FreezePolicy.NONE) == 0
        for name, t in state.params.items():
            if name.startswith("token_embed."):
                assert t.requires_grad  # input adapter always trains
            else:
                assert not t.requires_grad

    def test_full_trains_everything(self):
        state = make_state()
        count = apply_freeze(state, FreezePolicy.FULL)
        scoped = sum(t.size for n, t in state.params.items()
                     if not n.startswith("token_embed."))
        assert count == scoped
        assert all(t.requires_grad for _, t in state.params.items())

    def test_ln_pe_hand_count(self):
        # pos_embed + per-block 2 LN pairs + final LN, d=32, N=2, max_patches=6
        state = init_backbone(
            BackboneConfig(n_blocks=2, d_model=32, n_heads=4, d_ff=64,
                           patch_length=8, max_patches=6),
            np.random.default_rng(0),
        )
        count = apply_freeze(state, FreezePolicy.LN_PE)
        assert count == 6 * 32 + 2 * (2 * 2 * 32) + 2 * 32

    def test_policy_ordering_of_counts(self):
        state = make_state()
        counts = {p: apply_freeze(state, p) for p in
                  (FreezePolicy.FULL, FreezePolicy.LN_PE, FreezePolicy.PE,
                   FreezePolicy.LN, FreezePolicy.NONE)}
        assert counts[FreezePolicy.FULL] > counts[FreezePolicy.LN_PE]
        assert counts[FreezePolicy.LN_PE] > counts[FreezePolicy.PE]
        assert counts[FreezePolicy.LN_PE] > counts[FreezePolicy.LN]
        assert counts[FreezePolicy.NONE] == 0

    def test_final_only_scope(self):
        state = make_state(ln_scope="final_only")
        count = apply_freeze(state, FreezePolicy.LN)
        assert count == 2 * 8
        assert state.params.is_trainable("final_ln.gamma")
        assert not state.params.is_trainable("block.0.ln1.gamma")


class TestWeightFiles:
    def test_round_trip_bitwise(self, tmp_path):
        state = make_state(seed=13)
        apply_freeze(state, FreezePolicy.LN_PE)
        path = tmp_path / "w.bin"
        save_weights(state, path)
        again = load_weights(path, tiny_config())
        for name, t in state.params.items():
            assert again.params[name].data.tobytes() == t.data.tobytes()
            assert again.params.is_trainable(name) == state.params.is_trainable(name)

    def test_corrupted_magic_rejected(self, tmp_path):
        state = make_state()
        path = tmp_path / "w.bin"
        save_weights(state, path)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(WeightFormatError, match="magic"):
            load_weights(path, tiny_config())

    def test_truncated_file_rejected(self, tmp_path):
        state = make_state()
        path = tmp_path / "w.bin"
        save_weights(state, path)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(WeightFormatError, match="truncated"):
            load_weights(path, tiny_config())

    def test_extra_tensor_rejected_by_name(self, tmp_path):
        state = make_state()
        state.params.add("mystery.extra", Tensor(np.zeros(3)))
        path = tmp_path / "w.bin"
        save_weights(state, path)
        with pytest.raises(WeightFormatError, match="mystery.extra"):
            load_weights(path, tiny_config())

    def test_shape_mismatch_rejected(self, tmp_path):
        state = make_state()
        path = tmp_path / "w.bin"
        save_weights(state, path)
        with pytest.raises(WeightFormatError, match="shape"):
            load_weights(path, tiny_config(d_ff=32))

    def test_template_names_are_stable(self):
        names = [n for n, _ in param_template(tiny_config())]
        assert names[0] == "token_embed.weight"
        assert "block.1.ffn.w2" in names
        assert names[-1] == "final_ln.beta"
        assert len(names) == len(set(names))
