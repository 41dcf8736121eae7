"""Competitive query refinement and the prediction heads.

Stacked decoder layers alternate inter-query self-attention (the
mechanism that lets queries suppress duplicate claims), cross-attention
into the encoder tokens, and a feed-forward update, each in post-norm
residual form. The refined queries feed a two-class head (lesion vs
no-object) and a mask head that dots a per-query embedding against the
full-resolution feature map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .params import ParamStore


@dataclass(frozen=True)
class DecoderConfig:
    num_layers: int = 4
    num_heads: int = 4
    ffn_hidden: int = 256
    use_self_attention: bool = True

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError("decoder needs at least one layer")


@dataclass
class InstancePrediction:
    class_logits: T.Tensor  # [N, 2]
    class_probs: T.Tensor  # [N, 2], rows sum to 1
    mask_logits: T.Tensor  # [N, D, H, W]
    masks: T.Tensor  # sigmoid(mask_logits)

    @property
    def n_queries(self) -> int:
        return self.class_logits.shape[0]


def _attention(q_in, kv, heads, proj):
    c = q_in.shape[1]
    dk = c // heads

    def split(t, w, b):
        rows = t.shape[0]
        h = T.add(T.matmul(t, w), b)
        return T.transpose(T.reshape(h, (rows, heads, dk)), (1, 0, 2))

    q = split(q_in, *proj["q"])
    k = split(kv, *proj["k"])
    v = split(kv, *proj["v"])
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dk))
    attn = T.softmax_lastdim(scores)
    rows = q_in.shape[0]
    merged = T.reshape(T.transpose(T.matmul(attn, v), (1, 0, 2)), (rows, c))
    wo, bo = proj["out"]
    return T.add(T.matmul(merged, wo), bo)


class QueryDecoder:
    def __init__(self, cfg: DecoderConfig, embed_dim: int, store: ParamStore, prefix: str = "decoder"):
        self.cfg = cfg
        self.embed_dim = embed_dim
        if embed_dim % cfg.num_heads:
            raise ConfigError(f"embed_dim {embed_dim} not divisible by {cfg.num_heads} heads")
        self.layers = []
        for l in range(cfg.num_layers):
            base = f"{prefix}.layer{l}"
            layer = {
                "self": {
                    "q": store.linear(f"{base}.self_attn.q", embed_dim, embed_dim),
                    "k": store.linear(f"{base}.self_attn.k", embed_dim, embed_dim),
                    "v": store.linear(f"{base}.self_attn.v", embed_dim, embed_dim),
                    "out": store.linear(f"{base}.self_attn.out", embed_dim, embed_dim),
                },
                "ln1": store.layernorm(f"{base}.ln1", embed_dim),
                "cross": {
                    "q": store.linear(f"{base}.cross_attn.q", embed_dim, embed_dim),
                    "k": store.linear(f"{base}.cross_attn.k", embed_dim, embed_dim),
                    "v": store.linear(f"{base}.cross_attn.v", embed_dim, embed_dim),
                    "out": store.linear(f"{base}.cross_attn.out", embed_dim, embed_dim),
                },
                "ln2": store.layernorm(f"{base}.ln2", embed_dim),
                "fc1": store.linear(f"{base}.ffn.fc1", embed_dim, cfg.ffn_hidden),
                "fc2": store.linear(f"{base}.ffn.fc2", cfg.ffn_hidden, embed_dim),
                "ln3": store.layernorm(f"{base}.ln3", embed_dim),
            }
            self.layers.append(layer)

    def decoder_layer(self, q: T.Tensor, img: T.Tensor, layer_idx: int) -> T.Tensor:
        layer = self.layers[layer_idx]
        if self.cfg.use_self_attention:
            q = T.layernorm(T.add(q, _attention(q, q, self.cfg.num_heads, layer["self"])), *layer["ln1"])
        q = T.layernorm(T.add(q, _attention(q, img, self.cfg.num_heads, layer["cross"])), *layer["ln2"])
        w1, b1 = layer["fc1"]
        w2, b2 = layer["fc2"]
        ffn = T.add(T.matmul(T.relu(T.add(T.matmul(q, w1), b1)), w2), b2)
        return T.layernorm(T.add(q, ffn), *layer["ln3"])

    def decode(self, queries: T.Tensor, tokens: T.Tensor) -> T.Tensor:
        """Run all layers; every layer reads the same final encoder tokens."""
        q = queries
        for l in range(self.cfg.num_layers):
            q = self.decoder_layer(q, tokens, l)
        return q


class PredictionHeads:
    def __init__(self, embed_dim: int, store: ParamStore, prefix: str = "heads"):
        self.class_proj = store.linear(f"{prefix}.class", embed_dim, 2)
        self.mask_fc1 = store.linear(f"{prefix}.mask.fc1", embed_dim, embed_dim)
        self.mask_fc2 = store.linear(f"{prefix}.mask.fc2", embed_dim, embed_dim)

    def predict(self, queries: T.Tensor, voxel_features: T.Tensor) -> InstancePrediction:
        cw, cb = self.class_proj
        class_logits = T.add(T.matmul(queries, cw), cb)
        class_probs = T.softmax_lastdim(class_logits)

        w1, b1 = self.mask_fc1
        w2, b2 = self.mask_fc2
        embed = T.add(T.matmul(T.relu(T.add(T.matmul(queries, w1), b1)), w2), b2)
        c, d, h, w = voxel_features.shape
        flat = T.reshape(voxel_features, (c, d * h * w))
        mask_logits = T.reshape(T.matmul(embed, flat), (queries.shape[0], d, h, w))
        return InstancePrediction(
            class_logits=class_logits,
            class_probs=class_probs,
            mask_logits=mask_logits,
            masks=T.sigmoid(mask_logits),
        )
