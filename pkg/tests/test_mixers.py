"""Fusion-stage contracts: residual identities, selection semantics,
similarity diagnostics."""

import csv

import numpy as np
import pytest

from mixcast.backbone import LayerTaps
from mixcast.errors import ConfigError, DimensionError
from mixcast.mixers import (
    FusionParams,
    FusionVariant,
    HeadParams,
    LayerSelection,
    MixerParams,
    fuse_and_project,
    init_head,
    init_mixer,
    mix,
    select_features,
    similarity_matrices,
    write_similarity_csv,
)
from mixcast.model import ModelConfig, build_model
from mixcast.numerics import Tensor
from mixcast.preprocess import PatchConfig, build_patch_batch


def make_taps(rng, n_blocks=3, b=2, n_p=4, d=6, with_final=True):
    hidden = [Tensor(rng.normal(size=(b, n_p, d))) for _ in range(n_blocks + 1)]
    return LayerTaps(
        hidden=hidden,
        x_tilde=Tensor(rng.normal(size=(b, n_p, d))),
        final=Tensor(rng.normal(size=(b, n_p, d))) if with_final else None,
    )


def zeroed_mixer(d, d_hidden, rng):
    m = init_mixer(d, d_hidden, rng, use_bias=True, dropout_rate=0.0)
    m.w2.data[:] = 0.0
    m.b2.data[:] = 0.0
    return m


class TestMix:
    def test_residual_identity_with_zero_w2(self):
        rng = np.random.default_rng(0)
        m = zeroed_mixer(6, 5, rng)
        x = Tensor(rng.normal(size=(2, 4, 6)))
        tap = Tensor(rng.normal(size=(2, 4, 6)))
        np.testing.assert_array_equal(mix(x, tap, m).data, x.data)

    def test_all_zero_inputs_and_biases(self):
        rng = np.random.default_rng(1)
        m = init_mixer(6, 6, rng, use_bias=True, dropout_rate=0.0)
        m.b1.data[:] = 0.0
        m.b2.data[:] = 0.0
        out = mix(Tensor(np.zeros((1, 3, 6))), Tensor(np.zeros((1, 3, 6))), m)
        np.testing.assert_array_equal(out.data, np.zeros((1, 3, 6)))

    def test_random_vs_loop_oracle(self):
        rng = np.random.default_rng(2)
        m = init_mixer(4, 5, rng, use_bias=True, dropout_rate=0.0)
        x = rng.normal(size=(1, 3, 4))
        tap = rng.normal(size=(1, 3, 4))
        got = mix(Tensor(x), Tensor(tap), m).data
        for j in range(3):
            joined = np.concatenate([x[0, j], tap[0, j]])
            hidden = np.maximum(joined @ m.w1.data + m.b1.data, 0.0)
            want = x[0, j] + hidden @ m.w2.data + m.b2.data
            np.testing.assert_allclose(got[0, j], want, rtol=1e-12)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(3)
        m = init_mixer(4, 4, rng)
        with pytest.raises(DimensionError):
            mix(Tensor(np.zeros((1, 3, 4))), Tensor(np.zeros((1, 2, 4))), m)


class TestSelectFeatures:
    def test_boundary_uses_local_tap_and_final(self):
        taps = make_taps(np.random.default_rng(4))
        local, glob = select_features(taps, LayerSelection.BOUNDARY, local_tap=1)
        assert local is taps.hidden[1]
        assert glob is taps.final

    def test_half_average_matches_loop(self):
        rng = np.random.default_rng(5)
        taps = make_taps(rng, n_blocks=6)
        local, glob = select_features(taps, LayerSelection.HALF_AVERAGE, local_tap=1)
        first = np.mean([taps.hidden[i].data for i in (1, 2, 3)], axis=0)
        second = np.mean([taps.hidden[i].data for i in (4, 5, 6)], axis=0)
        np.testing.assert_allclose(local.data, first, rtol=1e-12)
        np.testing.assert_allclose(glob.data, second, rtol=1e-12)

    def test_local_only_drops_global(self):
        taps = make_taps(np.random.default_rng(6))
        local, glob = select_features(taps, LayerSelection.LOCAL_ONLY, local_tap=2)
        assert glob is None and local is taps.hidden[2]

    def test_out_of_range_tap(self):
        taps = make_taps(np.random.default_rng(7))
        with pytest.raises(ConfigError, match="out of range"):
            select_features(taps, LayerSelection.BOUNDARY, local_tap=9)


def fusion_for(taps, d, horizon, rng, variant=FusionVariant.MIXER,
               selection=LayerSelection.BOUNDARY, zero_mixers=True):
    n_p = taps.hidden[0].shape[1]
    f = FusionParams(
        variant=variant,
        selection=selection,
        local_tap=1,
        local_mixer=zeroed_mixer(d, d, rng) if zero_mixers else init_mixer(d, d, rng, dropout_rate=0.0),
        global_mixer=zeroed_mixer(d, d, rng) if zero_mixers else init_mixer(d, d, rng, dropout_rate=0.0),
        head=init_head(n_p, d, horizon, rng),
    )
    return f


class TestFuseAndProject:
    def test_double_residual_identity(self):
        rng = np.random.default_rng(8)
        taps = make_taps(rng, b=3, n_p=4, d=6)
        fusion = fusion_for(taps, 6, 5, rng)
        got = fuse_and_project(taps.x_tilde, taps, fusion, batch=None, denormalize=False)
        flat = (2.0 * taps.x_tilde.data).reshape(3, 24)
        want = flat @ fusion.head.w.data + fusion.head.b.data
        np.testing.assert_allclose(got.data, want, rtol=1e-12)

    def test_local_only_single_residual(self):
        rng = np.random.default_rng(9)
        taps = make_taps(rng, b=2, n_p=4, d=6)
        fusion = fusion_for(taps, 6, 5, rng, selection=LayerSelection.LOCAL_ONLY)
        got = fuse_and_project(taps.x_tilde, taps, fusion, batch=None, denormalize=False)
        want = taps.x_tilde.data.reshape(2, 24) @ fusion.head.w.data + fusion.head.b.data
        np.testing.assert_allclose(got.data, want, rtol=1e-12)

    def test_mixer_composition_oracle(self):
        # MIXER output must equal composing mix twice, adding, flattening,
        # projecting, and denormalizing by hand.
        rng = np.random.default_rng(10)
        taps = make_taps(rng, b=2, n_p=3, d=4)
        fusion = fusion_for(taps, 4, 6, rng, zero_mixers=False)
        windows = rng.normal(size=(2, 12)) * 3 + 5
        batch = build_patch_batch(windows, PatchConfig(length=4, stride=4, pad=0))
        got = fuse_and_project(taps.x_tilde, taps, fusion, batch)
        local = mix(taps.x_tilde, taps.hidden[1], fusion.local_mixer)
        glob = mix(taps.x_tilde, taps.final, fusion.global_mixer)
        fused = local.data + glob.data
        pred = fused.reshape(2, 12) @ fusion.head.w.data + fusion.head.b.data
        want = pred * batch.scale[:, None] + batch.mu[:, None]
        np.testing.assert_allclose(got.data, want, rtol=1e-12)

    def test_unused_tap_cannot_influence_output(self):
        rng = np.random.default_rng(11)
        taps = make_taps(rng, b=1, n_p=4, d=6)
        fusion = fusion_for(taps, 6, 5, rng, selection=LayerSelection.LOCAL_ONLY,
                            zero_mixers=False)
        a = fuse_and_project(taps.x_tilde, taps, fusion, batch=None, denormalize=False)
        taps.final = Tensor(np.full((1, 4, 6), 1e9))  # scribble on the unused branch
        taps.hidden[3] = Tensor(np.full((1, 4, 6), -1e9))
        b = fuse_and_project(taps.x_tilde, taps, fusion, batch=None, denormalize=False)
        np.testing.assert_array_equal(a.data, b.data)

    @pytest.mark.parametrize("variant", list(FusionVariant))
    def test_each_variant_runs_and_differs_from_raw_head(self, variant):
        cfg = ModelConfig(input_length=24, patch_length=8, patch_stride=4,
                          n_blocks=2, d_model=8, n_heads=2, d_ff=16,
                          dropout=0.0, fusion=variant.value)
        model = build_model(cfg, horizon=6, rng=np.random.default_rng(12))
        pred = model.predict(np.random.default_rng(13).normal(size=(3, 24)))
        assert pred.shape == (3, 6)
        assert np.all(np.isfinite(pred))

    def test_add_variant_closed_form(self):
        rng = np.random.default_rng(14)
        taps = make_taps(rng, b=2, n_p=3, d=4)
        fusion = fusion_for(taps, 4, 5, rng, variant=FusionVariant.ADD)
        got = fuse_and_project(taps.x_tilde, taps, fusion, batch=None, denormalize=False)
        fused = (taps.x_tilde.data + taps.hidden[1].data) + (taps.x_tilde.data + taps.final.data)
        want = fused.reshape(2, 12) @ fusion.head.w.data + fusion.head.b.data
        np.testing.assert_allclose(got.data, want, rtol=1e-12)

    def test_none_variant_uses_raw_taps(self):
        rng = np.random.default_rng(15)
        taps = make_taps(rng, b=2, n_p=3, d=4)
        fusion = fusion_for(taps, 4, 5, rng, variant=FusionVariant.NONE)
        got = fuse_and_project(taps.x_tilde, taps, fusion, batch=None, denormalize=False)
        fused = taps.hidden[1].data + taps.final.data
        want = fused.reshape(2, 12) @ fusion.head.w.data + fusion.head.b.data
        np.testing.assert_allclose(got.data, want, rtol=1e-12)


class TestSimilarity:
    def test_identical_rows_all_ones(self):
        taps = LayerTaps(hidden=[Tensor(np.tile([1.0, 2.0, 3.0], (4, 1)))])
        (m,) = similarity_matrices(taps)
        np.testing.assert_allclose(m.values, np.ones((4, 4)), atol=1e-12)

    def test_orthogonal_rows_identity(self):
        taps = LayerTaps(hidden=[Tensor(np.eye(4) * 7.0)])
        (m,) = similarity_matrices(taps)
        np.testing.assert_allclose(m.values, np.eye(4), atol=1e-12)

    def test_random_taps_properties(self):
        rng = np.random.default_rng(16)
        taps = make_taps(rng, n_blocks=2, b=1, n_p=6, d=5)
        for m in similarity_matrices(taps):
            assert np.max(np.abs(m.values - m.values.T)) <= 1e-12
            np.testing.assert_array_equal(np.diag(m.values), np.ones(6))
            assert np.all(m.values >= -1.0) and np.all(m.values <= 1.0)
            # independent dot-product oracle
            h = taps.hidden[m.layer].data[0]
            for i in range(6):
                for j in range(6):
                    if i == j:
                        continue
                    want = h[i] @ h[j] / (np.linalg.norm(h[i]) * np.linalg.norm(h[j]))
                    assert abs(m.values[i, j] - want) <= 1e-12

    def test_zero_row_flagged(self):
        h = np.random.default_rng(17).normal(size=(5, 4))
        h[2] = 0.0
        (m,) = similarity_matrices(LayerTaps(hidden=[Tensor(h)]))
        assert m.zero_rows == [2]
        assert m.values[2, 2] == 1.0
        assert np.all(m.values[2, [0, 1, 3, 4]] == 0.0)

    def test_csv_export_layout(self, tmp_path):
        rng = np.random.default_rng(18)
        taps = make_taps(rng, n_blocks=2, b=1, n_p=4, d=5)
        paths = write_similarity_csv(similarity_matrices(taps), tmp_path)
        assert [p.name for p in paths] == ["sim_layer_0.csv", "sim_layer_1.csv", "sim_layer_2.csv"]
        with paths[0].open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["p0", "p1", "p2", "p3"]
        assert len(rows) == 5 and len(rows[1]) == 4
