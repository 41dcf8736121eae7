"""Hybrid encoder: shapes, gating semantics, freezing, determinism."""

import numpy as np
import pytest

from miq3d import tensor as T
from miq3d.encoder import EncoderConfig, HybridEncoder
from miq3d.errors import ConfigError
from miq3d.params import ParamStore

from fdcheck import assert_grads_close

SMALL = EncoderConfig(
    volume_shape=(8, 8, 8),
    patch_size=4,
    embed_dim=16,
    num_heads=2,
    num_vit_blocks=2,
    cnn_channels=(2, 4, 4),
)


def build(cfg=SMALL, seed=0, dtype=np.float32, cnn_enabled=True):
    store = ParamStore(np.random.default_rng(seed), dtype=dtype)
    return HybridEncoder(cfg, store, cnn_enabled=cnn_enabled), store


def random_volume(cfg, seed=1, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return T.Tensor(rng.uniform(0, 1, (1, *cfg.volume_shape)).astype(dtype))


class TestConfig:
    def test_divisibility_checks(self):
        with pytest.raises(ConfigError):
            EncoderConfig(volume_shape=(30, 32, 32), patch_size=8)
        with pytest.raises(ConfigError):
            EncoderConfig(embed_dim=30, num_heads=4)


class TestCnnBranch:
    def test_stage_shapes_at_defaults(self):
        cfg = EncoderConfig()  # 32^3, channels (8, 16, 32)
        enc, _ = build(cfg)
        feats = enc.cnn_branch(random_volume(cfg))
        assert feats[0].shape == (8, 32, 32, 32)
        assert feats[1].shape == (16, 16, 16, 16)
        assert feats[2].shape == (32, 8, 8, 8)

    def test_deterministic(self):
        enc, _ = build()
        x = random_volume(SMALL)
        a = enc.cnn_branch(x)
        b = enc.cnn_branch(x)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.data, fb.data)

    def test_gradient_wrt_input_matches_fd(self):
        cfg = SMALL
        enc, _ = build(cfg, dtype=np.float64)
        x0 = np.random.default_rng(3).uniform(0.1, 0.9, (1, *cfg.volume_shape))

        def loss(xv):
            feats = enc.cnn_branch(xv)
            return T.tsum(T.mul(feats[-1], feats[-1]))

        assert_grads_close(loss, [x0])


class TestGate:
    def test_zero_gate_conv_gives_half_everywhere(self):
        enc, store = build()
        feats = enc.cnn_branch(random_volume(SMALL))
        gw = store.params["encoder.gate.block0.weight"]
        gb = store.params["encoder.gate.block0.bias"]
        gw.tensor.data = np.zeros_like(gw.data)
        gb.tensor.data = np.zeros_like(gb.data)
        gate = enc.make_gate(feats[0], 0)
        assert np.allclose(gate.g_full.data, 0.5)
        assert np.allclose(gate.g_tokens.data, 0.5)

    def test_saturated_gate_matches_ungated_block(self):
        enc, store = build()
        x = random_volume(SMALL)
        feats = enc.cnn_branch(x)
        gb = store.params["encoder.gate.block0.bias"]
        gb.tensor.data = np.full_like(gb.data, 50.0)
        gate = enc.make_gate(feats[0], 0)
        assert np.all(gate.g_tokens.data > 0.999999)
        tokens = enc.patch_embed(x)
        gated = enc.fused_vit_block(tokens, gate.g_tokens, 0)
        plain = enc.fused_vit_block(tokens, None, 0)
        assert np.abs(gated.data - plain.data).max() < 1e-6

    def test_tokens_equal_block_mean_of_full_gate(self):
        enc, _ = build(seed=4)
        feats = enc.cnn_branch(random_volume(SMALL, seed=5))
        gate = enc.make_gate(feats[1], 1)
        g_full = gate.g_full.data[0]
        td = SMALL.token_grid[0]
        p = SMALL.patch_size
        expected = np.zeros(SMALL.n_tokens)
        t = 0
        for i in range(td):
            for j in range(td):
                for k in range(td):
                    block = g_full[i * p : (i + 1) * p, j * p : (j + 1) * p, k * p : (k + 1) * p]
                    expected[t] = block.mean()
                    t += 1
        assert np.allclose(gate.g_tokens.data, expected, atol=1e-6)
        assert np.all((gate.g_full.data > 0) & (gate.g_full.data < 1))


class TestFusedBlock:
    def test_neutral_gate_equals_ungated_block(self):
        enc, _ = build(seed=6)
        tokens = enc.patch_embed(random_volume(SMALL, seed=7))
        ones = T.Tensor(np.ones(SMALL.n_tokens, dtype=np.float32))
        gated = enc.fused_vit_block(tokens, ones, 0)
        plain = enc.fused_vit_block(tokens, None, 0)
        assert np.abs(gated.data - plain.data).max() < 1e-6

    def test_vanishing_gate_drives_rows_uniform(self):
        enc, _ = build(seed=8)
        tokens = enc.patch_embed(random_volume(SMALL, seed=9))
        eps_gate = T.Tensor(np.full(SMALL.n_tokens, 1e-6, dtype=np.float32))
        block = enc.blocks[0]
        attn_scores = []

        # Recompute the gated attention rows directly at the op level.
        heads = SMALL.num_heads
        dk = SMALL.embed_dim // heads
        for proj in ("wq", "wk"):
            w, b = block[proj]
            h = T.add(T.matmul(tokens, w), b)
            attn_scores.append(T.transpose(T.reshape(h, (tokens.shape[0], heads, dk)), (1, 0, 2)))
        scores = T.scale(T.matmul(attn_scores[0], T.transpose(attn_scores[1], (0, 2, 1))), 1.0 / np.sqrt(dk))
        gated = T.mul(scores, T.reshape(eps_gate, (1, 1, SMALL.n_tokens)))
        rows = T.softmax_lastdim(gated).data
        assert np.abs(rows - 1.0 / SMALL.n_tokens).max() < 1e-3

    def test_attention_rows_sum_to_one(self):
        enc, _ = build(seed=10)
        tokens = enc.patch_embed(random_volume(SMALL, seed=11))
        feats = enc.cnn_branch(random_volume(SMALL, seed=11))
        gate = enc.make_gate(feats[0], 0)
        block = enc.blocks[0]
        heads = SMALL.num_heads
        dk = SMALL.embed_dim // heads
        parts = []
        for proj in ("wq", "wk"):
            w, b = block[proj]
            h = T.add(T.matmul(tokens, w), b)
            parts.append(T.transpose(T.reshape(h, (tokens.shape[0], heads, dk)), (1, 0, 2)))
        scores = T.scale(T.matmul(parts[0], T.transpose(parts[1], (0, 2, 1))), 1.0 / np.sqrt(dk))
        gated = T.mul(scores, T.reshape(gate.g_tokens, (1, 1, SMALL.n_tokens)))
        rows = T.softmax_lastdim(gated).data
        assert np.abs(rows.sum(axis=-1) - 1.0).max() < 1e-6


class TestGateMonotonicity:
    def test_column_weight_approaches_zero_score_value(self):
        # Two-token row: gating column 1 toward 0 drags its weight toward
        # the weight it would have if its raw score were 0.
        for a2 in (2.0, -2.0):
            scores = np.array([[0.7, a2]])
            target = np.exp(0.0) / (np.exp(0.7) + np.exp(0.0))
            deltas = []
            for gamma in (1.0, 0.5, 0.25, 0.1, 0.01, 0.0):
                gated = T.mul(T.Tensor(scores), T.Tensor(np.array([[1.0, gamma]])))
                weight = T.softmax_lastdim(gated).data[0, 1]
                deltas.append(abs(weight - target))
            assert all(x >= y - 1e-12 for x, y in zip(deltas, deltas[1:]))
            assert deltas[-1] < 1e-12


class TestEncode:
    def test_token_and_voxel_shapes_at_defaults(self):
        cfg = EncoderConfig()
        enc, _ = build(cfg)
        out = enc.encode(random_volume(cfg))
        assert out.tokens.shape == (64, 64)
        assert out.voxel_features.shape == (64, 32, 32, 32)

    def test_bitwise_deterministic(self):
        enc, _ = build(seed=12)
        x = random_volume(SMALL, seed=13)
        a = enc.encode(x)
        b = enc.encode(x)
        assert np.array_equal(a.tokens.data, b.tokens.data)
        assert np.array_equal(a.voxel_features.data, b.voxel_features.data)

    def test_neutral_gate_equivalence_end_to_end(self):
        # Saturate every gate conv -> gates == 1; must match the
        # gating-disabled code path elementwise.
        enc, store = build(seed=14)
        x = random_volume(SMALL, seed=15)
        for b in range(SMALL.num_vit_blocks):
            bias = store.params[f"encoder.gate.block{b}.bias"]
            bias.tensor.data = np.full_like(bias.data, 60.0)
        gated = enc.encode(x)
        enc.gating_enabled = False
        plain = enc.encode(x)
        assert np.abs(gated.tokens.data - plain.tokens.data).max() < 1e-6
        assert np.abs(gated.voxel_features.data - plain.voxel_features.data).max() < 1e-6

    def test_cnn_disabled_runs_with_unit_gates(self):
        enc, store = build(seed=16, cnn_enabled=False)
        assert not any(k.startswith("encoder.cnn.") or k.startswith("encoder.gate.") for k in store.params)
        out = enc.encode(random_volume(SMALL, seed=17))
        assert np.all(out.gate.g_tokens.data == 1.0)
        assert out.voxel_features.shape == (SMALL.embed_dim, *SMALL.volume_shape)

    def test_freeze_vit_blocks_vit_grads_only(self):
        cfg = EncoderConfig(
            volume_shape=(8, 8, 8),
            patch_size=4,
            embed_dim=16,
            num_heads=2,
            num_vit_blocks=2,
            cnn_channels=(2, 4, 4),
            freeze_vit=True,
        )
        enc, store = build(cfg, seed=18)
        out = enc.encode(random_volume(cfg, seed=19))
        T.tsum(T.mul(out.voxel_features, out.voxel_features)).backward()
        vit = [p for name, p in store.params.items() if name.startswith("encoder.vit.")]
        cnn = [p for name, p in store.params.items() if name.startswith("encoder.cnn.")]
        assert vit and cnn
        assert all(np.all(p.grad == 0) for p in vit)
        assert any(np.abs(p.grad).max() > 0 for p in cnn)
