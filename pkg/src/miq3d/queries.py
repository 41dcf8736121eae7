"""Prompt-conditioned instance query generation.

A single 3D click is turned into a seed prototype (trilinear sample of
the encoder's full-resolution features) and expanded into N distinct
queries: each learned slot embedding is concatenated with the seed and
pushed through a shared two-layer MLP.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import tensor as T


class PointPrompt(NamedTuple):
    """Continuous voxel coordinate; integer values hit voxel centers."""

    d: float
    h: float
    w: float


class SeedPrototype(NamedTuple):
    v_seed: T.Tensor  # [C]


class InstanceQuerySet(NamedTuple):
    queries: T.Tensor  # [N, C]

    @property
    def n_queries(self) -> int:
        return self.queries.shape[0]


def sample_seed(features: T.Tensor, prompt: PointPrompt) -> SeedPrototype:
    """Feature vector at the prompt location (differentiable w.r.t. features)."""
    return SeedPrototype(v_seed=T.trilinear_sample(features, tuple(prompt)))


def generate_queries(
    seed: SeedPrototype,
    slots: T.Tensor,
    fc1_w: T.Tensor,
    fc1_b: T.Tensor,
    fc2_w: T.Tensor,
    fc2_b: T.Tensor,
) -> InstanceQuerySet:
    """Expand one seed vector into N queries via [seed ; slot_n] -> MLP.

    The MLP is shared across slots, so queries differ only through their
    slot embeddings; hidden width is 2C with a relu.
    """
    n = slots.shape[0]
    c = seed.v_seed.shape[0]
    seed_rows = T.reshape(seed.v_seed, (1, c))
    tiled = T.matmul(T.Tensor(np.ones((n, 1), dtype=seed.v_seed.dtype)), seed_rows)
    joint = T.concat([tiled, slots], axis=1)  # [N, 2C]
    hidden = T.relu(T.add(T.matmul(joint, fc1_w), fc1_b))
    out = T.add(T.matmul(hidden, fc2_w), fc2_b)
    return InstanceQuerySet(queries=out)
