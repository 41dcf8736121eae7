"""Volumetric evaluation metrics: Dice, Normalized Surface Dice, and
multi-instance aggregation of both."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .assignment import hungarian
from .errors import ShapeMismatchError

DEFAULT_NSD_TOLERANCE = 1.0


@dataclass
class MetricReport:
    dice: float
    nsd: float
    per_instance: list = field(default_factory=list)  # (pred idx, gt idx, dice)
    instance_count_pred: int = 0
    instance_count_gt: int = 0


def dice_coeff(a: np.ndarray, b: np.ndarray) -> float:
    """2|a∩b| / (|a|+|b|); two empty masks count as a perfect match."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"dice_coeff: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def _surface_mask(m: np.ndarray) -> np.ndarray:
    """Voxels of m with at least one 6-neighbor outside m.

    The volume boundary counts as outside, so a mask touching the edge
    still has a surface there.
    """
    m = np.asarray(m, dtype=bool)
    padded = np.pad(m, 1)
    interior = np.ones_like(m)
    for axis in range(3):
        lo = np.take(padded, range(0, m.shape[axis]), axis=axis)
        hi = np.take(padded, range(2, m.shape[axis] + 2), axis=axis)
        lo = lo[tuple(slice(1, -1) if ax != axis else slice(None) for ax in range(3))]
        hi = hi[tuple(slice(1, -1) if ax != axis else slice(None) for ax in range(3))]
        interior &= lo & hi
    return m & ~interior


def surface_voxels(m: np.ndarray) -> np.ndarray:
    """Coordinates [K,3] of the 6-connectivity surface of a binary mask."""
    return np.argwhere(_surface_mask(m))


def nsd(a: np.ndarray, b: np.ndarray, tau: float = DEFAULT_NSD_TOLERANCE) -> float:
    """Normalized Surface Dice at tolerance ``tau`` (voxel units).

    Fraction of surface voxels of each mask lying within Euclidean
    distance tau of the other mask's surface; 1 if both surfaces are
    empty, 0 if exactly one is.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    sa = _surface_mask(a)
    sb = _surface_mask(b)
    na, nb = int(sa.sum()), int(sb.sum())
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    dist_to_b = ndimage.distance_transform_edt(~sb)
    dist_to_a = ndimage.distance_transform_edt(~sa)
    close_a = int((dist_to_b[sa] <= tau).sum())
    close_b = int((dist_to_a[sb] <= tau).sum())
    return (close_a + close_b) / (na + nb)


def instance_report(preds: list, gts: list, tau: float = DEFAULT_NSD_TOLERANCE) -> MetricReport:
    """Match predicted to ground-truth masks and aggregate Dice/NSD.

    Matching minimizes (1 - pairwise dice) via the Hungarian solver;
    every unmatched prediction or ground-truth instance contributes 0
    to both means.
    """
    preds = [np.asarray(p, dtype=bool) for p in preds]
    gts = [np.asarray(g, dtype=bool) for g in gts]
    n_pred, n_gt = len(preds), len(gts)
    if n_pred == 0 and n_gt == 0:
        return MetricReport(dice=1.0, nsd=1.0, instance_count_pred=0, instance_count_gt=0)
    if n_pred == 0 or n_gt == 0:
        return MetricReport(dice=0.0, nsd=0.0, instance_count_pred=n_pred, instance_count_gt=n_gt)

    pairwise = np.array([[dice_coeff(p, g) for g in gts] for p in preds])
    if n_pred >= n_gt:
        assign = hungarian(1.0 - pairwise)
        pairs = list(assign.pairs)
    else:
        assign = hungarian(1.0 - pairwise.T)
        pairs = [(i, j) for j, i in assign.pairs]

    per_instance = [(i, j, pairwise[i, j]) for i, j in pairs]
    entities = n_pred + n_gt - len(pairs)
    dice_sum = sum(d for _, _, d in per_instance)
    nsd_sum = sum(nsd(preds[i], gts[j], tau) for i, j in pairs)
    return MetricReport(
        dice=dice_sum / entities,
        nsd=nsd_sum / entities,
        per_instance=per_instance,
        instance_count_pred=n_pred,
        instance_count_gt=n_gt,
    )
