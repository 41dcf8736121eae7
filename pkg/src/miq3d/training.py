"""Training loop, Adam optimizer, and bit-exact checkpointing."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig, config_from_dict, config_to_dict
from .errors import CheckpointError, NonFiniteError, TrainingError
from .losses import GroundTruthSet, total_loss
from .metrics import instance_report
from .model import MIQModel
from .synthdata import generate, sample_prompt

CHECKPOINT_VERSION = 1


class Adam:
    """Adaptive-moment optimizer over a parameter store; skips frozen params."""

    def __init__(self, params: list, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if not p.frozen]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p in self.params:
            g = p.tensor.grad if p.tensor.grad is not None else 0.0
            m = self.m[p.name] = self.beta1 * self.m[p.name] + (1.0 - self.beta1) * g
            v = self.v[p.name] = self.beta2 * self.v[p.name] + (1.0 - self.beta2) * g * g
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p.tensor.data = p.tensor.data - (self.lr * update).astype(p.data.dtype)


def clip_global_norm(params: list, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if not p.frozen and p.tensor.grad is not None:
            total += float((p.tensor.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        factor = max_norm / norm
        for p in params:
            if not p.frozen and p.tensor.grad is not None:
                p.tensor.grad = (p.tensor.grad * factor).astype(p.tensor.grad.dtype)
    return norm


def training_volumes(cfg: RunConfig) -> list:
    return [generate(cfg.data.train_seed_base + i, cfg.synth) for i in range(cfg.data.train_count)]


def train_set_report(model: MIQModel, volumes: list, prompt_salt: int = 7) -> dict:
    """Mean matched-instance dice / count accuracy over training volumes."""
    reports = []
    for k, sample in enumerate(volumes):
        prompt, _ = sample_prompt(sample, sample.rng_seed * 1000003 + prompt_salt)
        preds = model.predict_instances(sample.volume, prompt)
        reports.append(instance_report([m for _, m in preds], sample.instance_masks))
    return {
        "dice": float(np.mean([r.dice for r in reports])),
        "nsd": float(np.mean([r.nsd for r in reports])),
        "count_acc": float(np.mean([r.instance_count_pred == r.instance_count_gt for r in reports])),
        "n_volumes": len(reports),
    }


def train(cfg: RunConfig, out_path=None, log_every: int = 10, progress=None, stop_check=None):
    """Run the optimization loop; returns (model, log rows).

    Deterministic for a fixed config: volume order, prompts, and
    parameter updates all derive from cfg.rng_seed. A non-finite value
    anywhere aborts with the offending op named. When
    ``optimizer.early_stop_dice`` > 0, training stops at the first
    periodic report reaching that mean dice and count accuracy;
    ``stop_check(model, report)`` is an optional extra stop condition
    evaluated at the same points.
    """
    model = MIQModel(cfg)
    volumes = training_volumes(cfg)
    val_volumes = [generate(cfg.data.val_seed_base + i, cfg.synth) for i in range(cfg.data.val_count)]
    opt = Adam(list(model.store.params.values()), lr=cfg.optimizer.lr, betas=cfg.optimizer.betas)
    rng = np.random.default_rng([cfg.rng_seed, 0xD1CE])
    log: list[dict] = []

    for step in range(1, cfg.optimizer.steps + 1):
        picks = rng.integers(0, len(volumes), size=cfg.optimizer.batch_size)
        prompt_seeds = [int(rng.integers(0, 2**62)) for _ in picks]
        model.store.zero_grads()
        batch_loss = 0.0
        try:
            for pick, pseed in zip(picks, prompt_seeds):
                sample = volumes[pick]
                prompt, _ = sample_prompt(sample, pseed)
                pred, _ = model.forward(sample.volume, prompt)
                loss, _ = total_loss(pred, GroundTruthSet(sample.instance_masks), cfg.loss)
                scaled = T.scale(loss, 1.0 / cfg.optimizer.batch_size)
                scaled.backward()
                batch_loss += scaled.item()
        except NonFiniteError as err:
            raise TrainingError(f"non-finite value at step {step}: {err}") from err
        if not np.isfinite(batch_loss):
            raise TrainingError(f"non-finite loss at step {step}")

        clip_global_norm(list(model.store.params.values()), cfg.optimizer.grad_clip)
        opt.step()
        row = {"step": step, "loss": batch_loss}

        if cfg.optimizer.eval_every and step % cfg.optimizer.eval_every == 0:
            report = train_set_report(model, volumes)
            row.update({"train_dice": report["dice"], "train_count_acc": report["count_acc"]})
            if val_volumes:
                val = train_set_report(model, val_volumes, prompt_salt=13)
                row.update({"val_dice": val["dice"], "val_nsd": val["nsd"], "val_count_acc": val["count_acc"]})
            if progress:
                progress(row)
            log.append(row)
            threshold_stop = (
                cfg.optimizer.early_stop_dice > 0
                and report["dice"] >= cfg.optimizer.early_stop_dice
                and report["count_acc"] >= cfg.optimizer.early_stop_count_acc
            )
            if threshold_stop or (stop_check is not None and stop_check(model, report)):
                break
        else:
            if progress and (step % log_every == 0 or step == 1):
                progress(row)
            log.append(row)

    if out_path is not None:
        save_checkpoint(out_path, cfg, model, opt, step=log[-1]["step"])
    return model, log


# -- checkpointing -----------------------------------------------------


def save_checkpoint(path, cfg: RunConfig, model: MIQModel, opt: Adam = None, step: int = 0) -> None:
    """Single-file npz: config echo, parameter blobs, optimizer state."""
    arrays = {}
    for name, p in model.store.params.items():
        arrays[f"param/{name}"] = p.data
    if opt is not None:
        for name in opt.m:
            arrays[f"adam_m/{name}"] = opt.m[name]
            arrays[f"adam_v/{name}"] = opt.v[name]
    meta = {
        "version": CHECKPOINT_VERSION,
        "step": int(step),
        "adam_t": int(opt.t) if opt is not None else 0,
        "config": config_to_dict(cfg),
        "frozen": sorted(name for name, p in model.store.params.items() if p.frozen),
    }
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Rebuild (cfg, model, opt, step); forward outputs match bitwise."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            arrays = {k: data[k] for k in data.files if k != "__meta__"}
    except (OSError, ValueError, KeyError) as err:
        raise CheckpointError(f"unreadable checkpoint {path}: {err}") from err
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")

    cfg = config_from_dict(meta["config"])
    model = MIQModel(cfg)
    saved = {k[len("param/") :] for k in arrays if k.startswith("param/")}
    expected = set(model.store.params)
    if saved != expected:
        missing = sorted(expected - saved)[:3]
        extra = sorted(saved - expected)[:3]
        raise CheckpointError(f"parameter set mismatch (missing {missing}, unexpected {extra})")
    for name, p in model.store.params.items():
        blob = arrays[f"param/{name}"]
        if blob.shape != p.data.shape:
            raise CheckpointError(f"shape mismatch for {name}: {blob.shape} vs {p.data.shape}")
        p.tensor.data = blob

    opt = Adam(list(model.store.params.values()), lr=cfg.optimizer.lr, betas=cfg.optimizer.betas)
    opt.t = meta.get("adam_t", 0)
    for name in opt.m:
        if f"adam_m/{name}" in arrays:
            opt.m[name] = arrays[f"adam_m/{name}"]
            opt.v[name] = arrays[f"adam_v/{name}"]
    return cfg, model, opt, meta.get("step", 0)
