"""Matplotlib figure rendering for the CLI report paths.

Every report-producing subcommand drops a PNG next to its delimited
output: loss curves for training, per-volume metric bars for eval, the
agreement heatmap for robustness, and slice overlays for predictions.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

INSTANCE_CMAP = plt.get_cmap("tab10")


def save_loss_curve(log: list, path) -> None:
    steps = [row["step"] for row in log]
    losses = [row["loss"] for row in log]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=1.0, label="train loss")
    dice_rows = [(row["step"], row["train_dice"]) for row in log if "train_dice" in row]
    if dice_rows:
        twin = ax.twinx()
        twin.plot(*zip(*dice_rows), "o-", color="tab:green", ms=3, label="train dice")
        twin.set_ylabel("mean instance dice")
        twin.set_ylim(0, 1.05)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("training")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_eval_bars(rows: list, aggregate: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(max(6, 0.25 * len(rows)), 4))
    xs = np.arange(len(rows))
    ax.bar(xs - 0.2, [r["dice"] for r in rows], width=0.4, label="dice")
    ax.bar(xs + 0.2, [r["nsd"] for r in rows], width=0.4, label="nsd")
    ax.axhline(aggregate["dice"], color="tab:blue", ls="--", lw=0.8)
    ax.axhline(aggregate["nsd"], color="tab:orange", ls="--", lw=0.8)
    ax.set_xlabel("volume")
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.05)
    ax.set_title(f"eval: dice {aggregate['dice']:.3f}, nsd {aggregate['nsd']:.3f}, count acc {aggregate['count_acc']:.2f}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_agreement_heatmap(matrix: np.ndarray, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(matrix, vmin=0, vmax=1, cmap="viridis")
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center",
                    color="white" if matrix[i, j] < 0.6 else "black", fontsize=9)
    ax.set_xlabel("prompt")
    ax.set_ylabel("prompt")
    ax.set_title("union-mask agreement")
    fig.colorbar(im)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_prediction_overlay(volume: np.ndarray, instances: list, prompt, path) -> None:
    """Axial slice at the prompt depth with per-instance colored overlays."""
    vol = volume[0]
    depth = int(round(prompt[0]))
    depth = min(max(depth, 0), vol.shape[0] - 1)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(vol[depth], cmap="gray", vmin=0, vmax=1)
    for idx, (score, mask) in enumerate(instances):
        color = INSTANCE_CMAP(idx % 10)
        overlay = np.zeros((*mask.shape[1:], 4))
        overlay[mask[depth]] = (*color[:3], 0.45)
        ax.imshow(overlay)
        ys, xs = np.nonzero(mask[depth])
        if len(ys):
            ax.text(xs[0], ys[0], f"{score:.2f}", color=color, fontsize=8)
    ax.plot(prompt[2], prompt[1], "r+", ms=14, mew=2)
    ax.set_title(f"axial slice {depth}: {len(instances)} instance(s)")
    ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
