"""Bipartite set-prediction loss.

Predictions are matched to ground-truth instances by minimizing a
classification + mask cost over all injections (Hungarian solve), then
matched pairs are penalized with cross-entropy, soft Dice, and
voxelwise BCE; unmatched queries receive a down-weighted no-object
classification term.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import tensor as T
from .assignment import MatchAssignment, hungarian
from .errors import ConfigError, ShapeMismatchError

if TYPE_CHECKING:
    from .decoder import InstancePrediction

LESION = 0
NO_OBJECT = 1

DICE_SMOOTHING = 1.0


@dataclass(frozen=True)
class LossWeights:
    """Term weights for matching cost and training loss.

    ``no_object_weight`` down-weights the classification loss of
    unmatched queries so the background class cannot dominate.
    """

    lambda_cls: float = 2.0
    lambda_dice: float = 5.0
    lambda_bce: float = 5.0
    no_object_weight: float = 0.1

    def __post_init__(self):
        if self.lambda_cls < 0 or self.lambda_dice < 0 or self.lambda_bce < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.lambda_cls == self.lambda_dice == self.lambda_bce == 0:
            raise ConfigError("at least one loss weight must be positive")


@dataclass
class GroundTruthSet:
    """Per-volume instance annotations: disjoint nonempty binary masks."""

    masks: list = field(default_factory=list)

    def __post_init__(self):
        self.masks = [np.asarray(m, dtype=bool) for m in self.masks]

    @property
    def count(self) -> int:
        return len(self.masks)


def soft_dice_loss(pred: T.Tensor, gt: np.ndarray) -> T.Tensor:
    """1 - smoothed Dice between a probability mask and a binary mask."""
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"soft_dice_loss: pred {pred.shape} vs gt {gt.shape}")
    gtf = gt.astype(pred.dtype)
    inter = T.tsum(T.mul(pred, T.Tensor(gtf)))
    denom = T.tsum(pred) + float(gtf.sum()) + DICE_SMOOTHING
    return 1.0 - (2.0 * inter + DICE_SMOOTHING) / denom


def bce_loss(pred_logits: T.Tensor, gt: np.ndarray) -> T.Tensor:
    """Mean voxelwise cross-entropy, computed from logits for stability."""
    if pred_logits.shape != gt.shape:
        raise ShapeMismatchError(f"bce_loss: pred {pred_logits.shape} vs gt {gt.shape}")
    gtf = T.Tensor(gt.astype(pred_logits.dtype))
    pos = T.logsigmoid(pred_logits)
    neg = T.logsigmoid(-pred_logits)
    return -T.tmean(T.mul(gtf, pos) + T.mul(1.0 - gtf, neg))


def _pairwise_terms(mask_logits: np.ndarray, gt_stack: np.ndarray):
    """Vectorized per-pair dice loss and bce over [N, V] x [M, V]."""
    n, v = mask_logits.shape
    z = np.exp(-np.abs(mask_logits))
    probs = np.where(mask_logits >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    inter = probs @ gt_stack.T
    psum = probs.sum(axis=1)[:, None]
    gsum = gt_stack.sum(axis=1)[None, :]
    dice = 1.0 - (2.0 * inter + DICE_SMOOTHING) / (psum + gsum + DICE_SMOOTHING)

    base = np.mean(np.maximum(mask_logits, 0.0) + np.log1p(np.exp(-np.abs(mask_logits))), axis=1)
    bce = base[:, None] - (mask_logits @ gt_stack.T) / v
    return dice, bce


def matching_cost(pred: "InstancePrediction", gts: GroundTruthSet, w: LossWeights) -> np.ndarray:
    """Cost matrix [N, M]: lower is a better (query, instance) pairing.

    Uses the predicted lesion probability (not its log), the soft Dice
    loss, and the voxelwise BCE; evaluated in float64 outside the tape.
    """
    if gts.count < 1:
        raise ConfigError("matching_cost requires at least one ground-truth instance")
    n = pred.class_probs.shape[0]
    probs = pred.class_probs.data.astype(np.float64)[:, LESION]
    logits = pred.mask_logits.data.astype(np.float64).reshape(n, -1)
    gt_stack = np.stack([m.reshape(-1) for m in gts.masks]).astype(np.float64)
    dice, bce = _pairwise_terms(logits, gt_stack)
    return -w.lambda_cls * probs[:, None] + w.lambda_dice * dice + w.lambda_bce * bce


def total_loss(
    pred: "InstancePrediction", gts: GroundTruthSet, w: LossWeights
) -> tuple[T.Tensor, MatchAssignment]:
    """Hungarian-matched training loss plus the assignment it used.

    Matched pairs contribute classification CE, soft Dice, and BCE;
    unmatched queries contribute only the down-weighted no-object CE,
    so no mask gradient flows through them. With no ground-truth
    instances every query takes the no-object term.
    """
    n = pred.class_logits.shape[0]
    log_probs = T.log_softmax_lastdim(pred.class_logits)

    if gts.count == 0:
        assign = MatchAssignment(pairs=(), total_cost=0.0)
        weights = np.zeros((n, 2), dtype=pred.class_logits.dtype)
        weights[:, NO_OBJECT] = w.lambda_cls * w.no_object_weight
        return -T.tsum(T.mul(log_probs, T.Tensor(weights))), assign

    with T.no_grad():
        cost = matching_cost(pred, gts, w)
    assign = hungarian(cost)

    matched = {i: j for i, j in assign.pairs}
    weights = np.zeros((n, 2), dtype=pred.class_logits.dtype)
    for i in range(n):
        if i in matched:
            weights[i, LESION] = w.lambda_cls
        else:
            weights[i, NO_OBJECT] = w.lambda_cls * w.no_object_weight
    loss = -T.tsum(T.mul(log_probs, T.Tensor(weights)))

    order = [i for i, _ in assign.pairs]
    sel = T.index_select(pred.mask_logits, order)
    m = len(order)
    gt_stack = np.stack([gts.masks[j] for _, j in assign.pairs]).astype(pred.mask_logits.dtype)
    gt_t = T.Tensor(gt_stack)

    probs = T.sigmoid(sel)
    inter = T.tsum(T.mul(probs, gt_t), axis=(1, 2, 3))
    psum = T.tsum(probs, axis=(1, 2, 3))
    gsum = gt_stack.reshape(m, -1).sum(axis=1)
    dice_vec = 1.0 - (2.0 * inter + DICE_SMOOTHING) / (psum + T.Tensor(gsum) + DICE_SMOOTHING)
    loss = loss + w.lambda_dice * T.tsum(dice_vec)

    pos = T.logsigmoid(sel)
    neg = T.logsigmoid(T.scale(sel, -1.0))
    bce_map = -(T.mul(gt_t, pos) + T.mul(1.0 - gt_t, neg))
    voxels = float(np.prod(sel.shape[1:]))
    bce_vec = T.scale(T.tsum(bce_map, axis=(1, 2, 3)), 1.0 / voxels)
    loss = loss + w.lambda_bce * T.tsum(bce_vec)

    return loss, assign
