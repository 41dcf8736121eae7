"""Dual-branch hybrid encoder.

A small residual CNN pyramid extracts local detail at three scales and
drives per-block spatial gates: each gate is a sigmoid of a 1x1x1
convolution over one CNN stage, resampled to full resolution and
block-averaged onto the token grid. Inside each ViT block the gate
rescales attention-score columns before the softmax, so low-saliency
locations are down-weighted as attention targets for every query. The
encoder also emits a full-resolution feature map (upsampled tokens fused
with the highest-resolution CNN stage) for mask prediction and seed
sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .params import ParamStore

MLP_RATIO = 4


@dataclass(frozen=True)
class EncoderConfig:
    volume_shape: tuple = (32, 32, 32)
    patch_size: int = 8
    embed_dim: int = 64
    num_heads: int = 4
    num_vit_blocks: int = 4
    cnn_channels: tuple = (8, 16, 32)
    freeze_vit: bool = False

    def __post_init__(self):
        for extent in self.volume_shape:
            if extent % self.patch_size:
                raise ConfigError(
                    f"volume shape {self.volume_shape} not divisible by patch size {self.patch_size}"
                )
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by {self.num_heads} heads")
        if len(self.cnn_channels) != 3:
            raise ConfigError("cnn_channels must list exactly 3 stages")
        if self.num_vit_blocks < 1:
            raise ConfigError("need at least one ViT block")

    @property
    def token_grid(self) -> tuple:
        return tuple(s // self.patch_size for s in self.volume_shape)

    @property
    def n_tokens(self) -> int:
        return int(np.prod(self.token_grid))


@dataclass
class GateMap:
    g_full: T.Tensor  # [1, D, H, W]
    g_tokens: T.Tensor  # [T]


@dataclass
class EncoderOutput:
    tokens: T.Tensor  # [T, C]
    voxel_features: T.Tensor  # [C, D, H, W]
    gate: GateMap


class HybridEncoder:
    """Builds parameters on a ParamStore and runs the fused forward pass.

    ``cnn_enabled=False`` is the "no CNN branch" ablation: no cnn.* or
    gate.* parameters exist and every gate is the neutral constant 1.
    """

    def __init__(self, cfg: EncoderConfig, store: ParamStore, cnn_enabled: bool = True, prefix: str = "encoder"):
        self.cfg = cfg
        self.cnn_enabled = cnn_enabled
        self.gating_enabled = True  # flipped off only by tests/ablations
        c = cfg.embed_dim
        frozen = cfg.freeze_vit

        if cnn_enabled:
            self.cnn_params = []
            in_ch = 1
            for s, out_ch in enumerate(cfg.cnn_channels):
                base = f"{prefix}.cnn.stage{s}"
                entry = store.conv(f"{base}.entry", out_ch, in_ch, 3)
                conv1 = store.conv(f"{base}.conv1", out_ch, out_ch, 3)
                conv2 = store.conv(f"{base}.conv2", out_ch, out_ch, 3)
                self.cnn_params.append((entry, conv1, conv2))
                in_ch = out_ch
            self.gate_params = [
                store.conv(f"{prefix}.gate.block{b}", 1, cfg.cnn_channels[min(b, 2)], 1)
                for b in range(cfg.num_vit_blocks)
            ]

        vit = f"{prefix}.vit"
        patch_dim = cfg.patch_size**3
        self.patch_w = store.uniform(f"{vit}.patch_embed.weight", (patch_dim, c), patch_dim, frozen)
        self.patch_b = store.zeros(f"{vit}.patch_embed.bias", (c,), frozen)
        self.pos_embed = store.zeros(f"{vit}.pos_embed", (cfg.n_tokens, c), frozen)
        self.blocks = []
        for b in range(cfg.num_vit_blocks):
            base = f"{vit}.block{b}"
            self.blocks.append(
                {
                    "wq": store.linear(f"{base}.attn.q", c, c, frozen),
                    "wk": store.linear(f"{base}.attn.k", c, c, frozen),
                    "wv": store.linear(f"{base}.attn.v", c, c, frozen),
                    "wo": store.linear(f"{base}.attn.out", c, c, frozen),
                    "ln1": store.layernorm(f"{base}.ln1", c, frozen),
                    "fc1": store.linear(f"{base}.mlp.fc1", c, MLP_RATIO * c, frozen),
                    "fc2": store.linear(f"{base}.mlp.fc2", MLP_RATIO * c, c, frozen),
                    "ln2": store.layernorm(f"{base}.ln2", c, frozen),
                }
            )

        fuse_in = c + (cfg.cnn_channels[0] if cnn_enabled else 0)
        self.fuse = store.conv(f"{prefix}.fuse", c, fuse_in, 1)

    # -- CNN branch ------------------------------------------------------
    def cnn_branch(self, x: T.Tensor) -> list:
        """Three residual stages; stages 1 and 2 halve resolution on entry.

        Exact halving with an odd kernel is impossible under conv3d's
        integral-output rule, so the downsampling entry is a 2x block
        average followed by the entry conv.
        """
        if x.shape != (1, *self.cfg.volume_shape):
            raise ConfigError(f"input shape {x.shape} != (1, {self.cfg.volume_shape})")
        feats = []
        h = x
        for s, ((ew, eb), (w1, b1), (w2, b2)) in enumerate(self.cnn_params):
            if s:
                half = tuple(e // 2 for e in h.shape[1:])
                h = T.avgpool_downsample(h, half)
            h = T.relu(T.add(T.conv3d(h, ew, stride=1, pad=1), eb))
            y = T.relu(T.add(T.conv3d(h, w1, stride=1, pad=1), b1))
            y = T.add(T.conv3d(y, w2, stride=1, pad=1), b2)
            h = T.relu(T.add(h, y))
            feats.append(h)
        return feats

    def make_gate(self, cnn_feat: T.Tensor, block: int) -> GateMap:
        gw, gb = self.gate_params[block]
        g_small = T.sigmoid(T.add(T.conv3d(cnn_feat, gw, stride=1, pad=0), gb))
        g_full = T.resize_trilinear(g_small, self.cfg.volume_shape)
        g_tok = T.avgpool_downsample(g_full, self.cfg.token_grid)
        return GateMap(g_full=g_full, g_tokens=T.reshape(g_tok, (self.cfg.n_tokens,)))

    def _neutral_gate(self, dtype) -> GateMap:
        ones_full = T.Tensor(np.ones((1, *self.cfg.volume_shape), dtype=dtype))
        ones_tok = T.Tensor(np.ones(self.cfg.n_tokens, dtype=dtype))
        return GateMap(g_full=ones_full, g_tokens=ones_tok)

    # -- ViT branch -------------------------------------------------------
    def patch_embed(self, x: T.Tensor) -> T.Tensor:
        p = self.cfg.patch_size
        td, th, tw = self.cfg.token_grid
        blocks = T.reshape(x, (1, td, p, th, p, tw, p))
        blocks = T.transpose(blocks, (1, 3, 5, 0, 2, 4, 6))
        flat = T.reshape(blocks, (self.cfg.n_tokens, p**3))
        return T.add(T.add(T.matmul(flat, self.patch_w), self.patch_b), self.pos_embed)

    def _attention(self, q_in, k_in, v_in, block, gate_cols=None):
        c = self.cfg.embed_dim
        heads = self.cfg.num_heads
        dk = c // heads
        wq, bq = block["wq"]
        wk, bk = block["wk"]
        wv, bv = block["wv"]

        def split(t, proj, bias):
            rows = t.shape[0]
            h = T.add(T.matmul(t, proj), bias)
            return T.transpose(T.reshape(h, (rows, heads, dk)), (1, 0, 2))

        q = split(q_in, wq, bq)
        k = split(k_in, wk, bk)
        v = split(v_in, wv, bv)
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dk))
        if gate_cols is not None:
            scores = T.mul(scores, T.reshape(gate_cols, (1, 1, gate_cols.shape[0])))
        attn = T.softmax_lastdim(scores)
        mixed = T.matmul(attn, v)  # [heads, rows, dk]
        rows = q_in.shape[0]
        merged = T.reshape(T.transpose(mixed, (1, 0, 2)), (rows, c))
        wo, bo = block["wo"]
        return T.add(T.matmul(merged, wo), bo)

    def fused_vit_block(self, tokens: T.Tensor, g_tokens, block_idx: int) -> T.Tensor:
        """Gated self-attention + MLP, post-norm residual form.

        ``g_tokens=None`` runs the plain ungated block.
        """
        block = self.blocks[block_idx]
        attn = self._attention(tokens, tokens, tokens, block, gate_cols=g_tokens)
        x = T.layernorm(T.add(tokens, attn), *block["ln1"])
        w1, b1 = block["fc1"]
        w2, b2 = block["fc2"]
        m = T.add(T.matmul(T.relu(T.add(T.matmul(x, w1), b1)), w2), b2)
        return T.layernorm(T.add(x, m), *block["ln2"])

    # -- full encode -------------------------------------------------------
    def encode(self, x: T.Tensor) -> EncoderOutput:
        if x.shape != (1, *self.cfg.volume_shape):
            raise ConfigError(f"input shape {x.shape} != (1, {self.cfg.volume_shape})")
        feats = self.cnn_branch(x) if self.cnn_enabled else None

        tokens = self.patch_embed(x)
        gate = None
        for b in range(self.cfg.num_vit_blocks):
            if self.cnn_enabled and self.gating_enabled:
                gate = self.make_gate(feats[min(b, 2)], b)
                tokens = self.fused_vit_block(tokens, gate.g_tokens, b)
            else:
                gate = self._neutral_gate(x.dtype)
                tokens = self.fused_vit_block(tokens, None, b)

        c = self.cfg.embed_dim
        td, th, tw = self.cfg.token_grid
        grid = T.reshape(T.transpose(tokens, (1, 0)), (c, td, th, tw))
        up = T.resize_trilinear(grid, self.cfg.volume_shape)
        fused_in = T.concat([up, feats[0]], axis=0) if self.cnn_enabled else up
        fw, fb = self.fuse
        voxel_features = T.add(T.conv3d(fused_in, fw, stride=1, pad=0), fb)
        return EncoderOutput(tokens=tokens, voxel_features=voxel_features, gate=gate)
