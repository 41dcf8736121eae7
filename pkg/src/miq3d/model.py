"""Full pipeline: encode, prompt-condition, decode, predict.

Assembles the hybrid encoder, query generator, refinement decoder, and
prediction heads over one parameter store, honoring the two ablation
switches: ``disable_cnn_branch`` drops the CNN/gating side entirely,
``disable_pciqg_cqrd`` reverts to a single query taken directly from the
seed prototype (single-instance paradigm, no slots, no decoder).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import RunConfig
from .decoder import InstancePrediction, PredictionHeads, QueryDecoder
from .encoder import EncoderOutput, HybridEncoder
from .losses import LESION
from .params import ParamStore
from .queries import PointPrompt, generate_queries, sample_seed


class MIQModel:
    def __init__(self, cfg: RunConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(cfg.rng_seed)
        self.store = ParamStore(rng, dtype=dtype)
        self.encoder = HybridEncoder(
            cfg.encoder, self.store, cnn_enabled=not cfg.ablation.disable_cnn_branch
        )
        c = cfg.encoder.embed_dim
        self.single_query = cfg.ablation.disable_pciqg_cqrd
        if not self.single_query:
            self.slots = self.store.uniform("pciqg.slots", (cfg.n_queries, c), c)
            self.q_fc1 = self.store.linear("pciqg.mlp.fc1", 2 * c, 2 * c)
            self.q_fc2 = self.store.linear("pciqg.mlp.fc2", 2 * c, c)
            self.decoder = QueryDecoder(cfg.decoder, c, self.store)
        self.heads = PredictionHeads(c, self.store)

    @property
    def n_queries(self) -> int:
        return 1 if self.single_query else self.cfg.n_queries

    def forward(self, volume: np.ndarray, prompt: PointPrompt) -> tuple[InstancePrediction, EncoderOutput]:
        x = T.Tensor(np.asarray(volume, dtype=self.dtype))
        enc = self.encoder.encode(x)
        seed = sample_seed(enc.voxel_features, prompt)
        if self.single_query:
            refined = T.reshape(seed.v_seed, (1, self.cfg.encoder.embed_dim))
        else:
            qset = generate_queries(seed, self.slots, *self.q_fc1, *self.q_fc2)
            refined = self.decoder.decode(qset.queries, enc.tokens)
        return self.heads.predict(refined, enc.voxel_features), enc

    def predict_instances(self, volume: np.ndarray, prompt: PointPrompt) -> list:
        """Thresholded, conflict-free instance masks for one prompt.

        Keeps queries with lesion probability > 0.5, binarizes masks at
        0.5, and resolves voxels claimed by several instances toward the
        highest mask probability; empty masks are dropped.
        """
        with T.no_grad():
            pred, _ = self.forward(volume, prompt)
        scores = pred.class_probs.data[:, LESION]
        keep = np.flatnonzero(scores > 0.5)
        if keep.size == 0:
            return []
        probs = pred.masks.data[keep]
        claimed = probs > 0.5
        owner = np.argmax(probs, axis=0)
        results = []
        for slot, query in enumerate(keep):
            mask = claimed[slot] & (owner == slot)
            if mask.any():
                results.append((float(scores[query]), mask))
        return results
