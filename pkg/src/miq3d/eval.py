"""Checkpoint evaluation and the prompt-robustness experiment."""

from __future__ import annotations

import numpy as np

from .errors import PromptBoundsError
from .metrics import dice_coeff, instance_report
from .model import MIQModel
from .synthdata import VolumeSample, sample_prompt

PROMPT_SALT = 9176


def evaluate_samples(model: MIQModel, samples: list, tau: float = 1.0):
    """Instance metrics per volume plus the aggregate table.

    Prompts are drawn deterministically from each sample's own rng_seed,
    so evaluating the same data twice gives identical numbers.
    """
    rows = []
    for sample in samples:
        prompt, _ = sample_prompt(sample, sample.rng_seed * 1000003 + PROMPT_SALT)
        preds = model.predict_instances(sample.volume, prompt)
        report = instance_report([m for _, m in preds], sample.instance_masks, tau=tau)
        rows.append(
            {
                "seed": sample.rng_seed,
                "dice": report.dice,
                "nsd": report.nsd,
                "count_pred": report.instance_count_pred,
                "count_gt": report.instance_count_gt,
            }
        )
    aggregate = {
        "dice": float(np.mean([r["dice"] for r in rows])) if rows else 0.0,
        "nsd": float(np.mean([r["nsd"] for r in rows])) if rows else 0.0,
        "count_acc": float(np.mean([r["count_pred"] == r["count_gt"] for r in rows])) if rows else 0.0,
        "n_volumes": len(rows),
    }
    return aggregate, rows


def union_mask(instances: list, shape) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    for _, mask in instances:
        out |= mask
    return out


def prompt_robustness(model: MIQModel, sample: VolumeSample, prompts: list) -> dict:
    """Pairwise union-mask agreement across prompts on one volume.

    agreement[i][j] is the dice between the union of instances predicted
    from prompt i and from prompt j; the diagonal is exactly 1.
    """
    if len(prompts) < 2:
        raise PromptBoundsError("prompt_robustness needs at least two prompts")
    runs = [model.predict_instances(sample.volume, p) for p in prompts]
    unions = [union_mask(run, sample.shape) for run in runs]
    n = len(prompts)
    agreement = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            agreement[i, j] = agreement[j, i] = dice_coeff(unions[i], unions[j])
    return {
        "agreement": agreement,
        "instance_counts": [len(run) for run in runs],
        "prompts": [list(p) for p in prompts],
    }
