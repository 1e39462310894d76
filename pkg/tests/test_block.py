"""Attention block: projections, residual path, sweeps and weight I/O."""

import dataclasses

import numpy as np
import pytest

from fastattn.attention import fast_attention
from fastattn.block import (FABlockConfig, FAWeights, channel_sweep_report,
                            fa_block_forward, init_fa_weights, load_fa_weights,
                            save_fa_weights)
from fastattn.core import FeatureMap, ShapeError, random_feature_map
from fastattn.counting import count_ops


def _block(channels=16, cprime=4, seed=0, **cfg_kwargs):
    cfg = FABlockConfig(channels=channels, attention_channels=cprime, **cfg_kwargs)
    weights = init_fa_weights(channels, cprime, seed)
    return cfg, weights


def test_output_shape_matches_input():
    cfg, weights = _block()
    x = random_feature_map(16, 8, 8, seed=1)
    out = fa_block_forward(x, weights, cfg)
    assert out.data.shape == x.data.shape


def test_forward_matches_hand_composed_pipeline():
    # reassemble the block from the public primitives and compare
    cfg, weights = _block(channels=12, cprime=5, seed=3)
    x = random_feature_map(12, 6, 7, seed=4)
    flat = x.flatten()
    q = flat @ weights.w_query
    k = flat @ weights.w_key
    v = np.maximum(flat @ weights.w_value, 0.0)
    y = fast_attention(q, k, v) @ weights.w_out + flat
    expected = FeatureMap.from_flat(y, 6, 7).data
    out = fa_block_forward(x, weights, cfg)
    np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-12)


def test_zero_value_weights_make_identity_with_residual():
    cfg, weights = _block(channels=8, cprime=3, seed=5)
    weights = dataclasses.replace(weights, w_value=np.zeros_like(weights.w_value))
    x = random_feature_map(8, 4, 4, seed=6)
    out = fa_block_forward(x, weights, cfg)
    np.testing.assert_array_equal(out.data, x.data)


def test_no_residual_no_projection_is_bare_attention():
    cfg, weights = _block(channels=8, cprime=3, seed=7,
                          use_residual=False, use_output_projection=False,
                          relu_on_value=False)
    x = random_feature_map(8, 4, 4, seed=8)
    flat = x.flatten()
    expected = fast_attention(flat @ weights.w_query, flat @ weights.w_key,
                              flat @ weights.w_value)
    np.testing.assert_allclose(fa_block_forward(x, weights, cfg).flatten(),
                               expected, atol=1e-13)


def test_quadratic_impl_matches_fast_impl():
    x = random_feature_map(16, 8, 8, seed=9)
    cfg_fast, weights = _block(seed=10)
    cfg_quad = dataclasses.replace(cfg_fast, attention_impl="quadratic")
    fast = fa_block_forward(x, weights, cfg_fast)
    quad = fa_block_forward(x, weights, cfg_quad)
    np.testing.assert_allclose(fast.data, quad.data, rtol=0, atol=1e-10)


def test_softmax_impl_differs_from_fast():
    x = random_feature_map(16, 8, 8, seed=11)
    cfg_fast, weights = _block(seed=12)
    cfg_soft = dataclasses.replace(cfg_fast, attention_impl="softmax")
    fast = fa_block_forward(x, weights, cfg_fast)
    soft = fa_block_forward(x, weights, cfg_soft)
    assert np.max(np.abs(fast.data - soft.data)) > 1e-6


class TestInit:
    def test_deterministic(self):
        a = init_fa_weights(16, 4, seed=42)
        b = init_fa_weights(16, 4, seed=42)
        for name in ("w_query", "w_key", "w_value", "w_out"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_seeds_decorrelate(self):
        a = init_fa_weights(16, 4, seed=1)
        b = init_fa_weights(16, 4, seed=2)
        assert not np.array_equal(a.w_query, b.w_query)

    def test_projections_decorrelated_within_seed(self):
        w = init_fa_weights(16, 16, seed=3)
        assert not np.array_equal(w.w_query, w.w_key)

    def test_entries_within_fan_in_bound(self):
        w = init_fa_weights(64, 32, seed=4)
        bound = 1.0 / np.sqrt(64)
        for name in ("w_query", "w_key", "w_value", "w_out"):
            assert np.max(np.abs(getattr(w, name))) < bound

    def test_shapes(self):
        w = init_fa_weights(24, 6, seed=0)
        assert w.w_query.shape == (24, 6)
        assert w.w_key.shape == (24, 6)
        assert w.w_value.shape == (24, 24)
        assert w.w_out.shape == (24, 24)
        assert w.b_query is None

    def test_bias_init_zero(self):
        w = init_fa_weights(10, 5, seed=0, with_bias=True)
        np.testing.assert_array_equal(w.b_query, np.zeros(5))
        np.testing.assert_array_equal(w.b_out, np.zeros(10))


def test_attention_channels_cannot_exceed_channels():
    with pytest.raises((ShapeError, ValueError)):
        FABlockConfig(channels=8, attention_channels=16)


def test_config_weight_mismatch_rejected():
    cfg, _ = _block(channels=16, cprime=4)
    wrong = init_fa_weights(16, 8, seed=0)
    x = random_feature_map(16, 4, 4, seed=0)
    with pytest.raises(ShapeError):
        fa_block_forward(x, wrong, cfg)


def test_input_channel_mismatch_rejected():
    cfg, weights = _block(channels=16, cprime=4)
    with pytest.raises(ShapeError):
        fa_block_forward(random_feature_map(8, 4, 4, seed=0), weights, cfg)


class TestChannelSweep:
    def test_reference_pair_counts_frozen(self):
        # c' = 32 on a 128-channel 64x64 map: the c'-dependent MACs split
        # into two equal pairs of 33,554,432 (projections Q,K and core),
        # 67,108,864 together.
        x = random_feature_map(128, 64, 64, seed=0)
        row, = channel_sweep_report(x, [32], seed=1, repeats=1)
        assert row.projection_pair_macs == 33_554_432
        assert row.core_pair_macs == 33_554_432
        assert row.projection_pair_macs + row.core_pair_macs == 67_108_864

    def test_measured_macs_strictly_increasing_in_cprime(self):
        x = random_feature_map(32, 16, 16, seed=2)
        rows = channel_sweep_report(x, [4, 8, 16, 32], seed=3, repeats=1)
        macs = [row.macs for row in rows]
        assert macs == sorted(macs)
        assert len(set(macs)) == len(macs)

    def test_cprime_dependent_terms_scale_linearly(self):
        x = random_feature_map(32, 16, 16, seed=4)
        r8, r16 = channel_sweep_report(x, [8, 16], seed=5, repeats=1)
        n, channels = 256, 32
        # doubling c' adds exactly 4*n*C*delta_cprime measured MACs
        assert r16.macs - r8.macs == 4 * n * channels * 8
        assert r16.projection_pair_macs == 2 * r8.projection_pair_macs
        assert r16.core_pair_macs == 2 * r8.core_pair_macs


def test_measured_block_macs_match_analytic():
    from fastattn.flops import flops_fast_attention_module
    cfg, weights = _block(channels=24, cprime=6, seed=13)
    x = random_feature_map(24, 8, 8, seed=14)
    with count_ops() as ops:
        fa_block_forward(x, weights, cfg)
    assert ops.macs == flops_fast_attention_module(24, 8, 8, 6).total


def test_core_macs_scale_linearly_with_spatial_size():
    # fast core grows 4x when H and W double; the quadratic core grows 16x
    results = {}
    for impl in ("fast", "quadratic"):
        core = {}
        for hw in (8, 16):
            cfg, weights = _block(channels=16, cprime=4, seed=15, attention_impl=impl)
            x = random_feature_map(16, hw, hw, seed=16)
            with count_ops() as ops:
                fa_block_forward(x, weights, cfg)
            n = hw * hw
            projections = 2 * n * 16 * 4 + 2 * n * 16 * 16
            core[hw] = ops.macs - projections
        results[impl] = core[16] / core[8]
    assert results["fast"] == 4.0
    assert results["quadratic"] == 16.0


class TestWeightIO:
    def test_roundtrip_bitwise(self, tmp_path):
        weights = init_fa_weights(16, 4, seed=20)
        save_fa_weights(tmp_path / "w", weights)
        loaded = load_fa_weights(tmp_path / "w")
        for name in ("w_query", "w_key", "w_value", "w_out"):
            np.testing.assert_array_equal(getattr(loaded, name), getattr(weights, name))
        assert loaded.b_query is None

    def test_roundtrip_with_bias(self, tmp_path):
        weights = init_fa_weights(8, 2, seed=21, with_bias=True)
        save_fa_weights(tmp_path / "wb", weights)
        loaded = load_fa_weights(tmp_path / "wb")
        np.testing.assert_array_equal(loaded.b_value, weights.b_value)

    def test_manifest_names_all_tensors(self, tmp_path):
        import json
        save_fa_weights(tmp_path / "m", init_fa_weights(8, 2, seed=22))
        manifest = json.loads((tmp_path / "m" / "manifest.json").read_text())
        assert manifest["channels"] == 8
        assert manifest["attention_channels"] == 2
        assert set(manifest["tensors"]) == {"w_query", "w_key", "w_value", "w_out"}
        for filename in manifest["tensors"].values():
            assert (tmp_path / "m" / filename).exists()

    def test_loaded_weights_reproduce_forward(self, tmp_path):
        cfg, weights = _block(channels=8, cprime=2, seed=23)
        save_fa_weights(tmp_path / "f", weights)
        x = random_feature_map(8, 4, 4, seed=24)
        a = fa_block_forward(x, weights, cfg)
        b = fa_block_forward(x, load_fa_weights(tmp_path / "f"), cfg)
        np.testing.assert_array_equal(a.data, b.data)
