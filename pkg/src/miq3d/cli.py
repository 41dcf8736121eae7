"""miq3d command line: data generation, training, evaluation, serving.

Report-producing subcommands (train/eval/predict/robustness) write their
JSON or CSV output plus a rendered PNG figure with the same stem.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, PromptBoundsError
from .eval import evaluate_samples, prompt_robustness
from .synthdata import SynthConfig, generate, read_vol, write_vol
from .training import load_checkpoint, train


def _parse_point(text: str):
    from .queries import PointPrompt

    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise click.BadParameter(f"expected d,h,w — got {text!r}")
    return PointPrompt(*parts)


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2))
    click.echo(f"wrote {path}")


def _figure_path(json_path) -> Path:
    return Path(json_path).with_suffix(".png")


@click.group()
def main():
    """Single-point-to-multi-instance 3D segmentation toolkit."""


@main.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--count", default=8, show_default=True, help="number of volumes")
@click.option("--seed", default=1000, show_default=True, help="seed of the first volume")
@click.option("--shape", default="32,32,32", show_default=True)
@click.option("--max-instances", default=4, show_default=True)
@click.option("--radius-range", default="3,6", show_default=True)
@click.option("--noise-sigma", default=0.1, show_default=True)
@click.option("--blur-sigma", default=1.0, show_default=True)
@click.option("--intensity-offset", default=0.5, show_default=True)
def gen_data(out_dir, count, seed, shape, max_instances, radius_range, noise_sigma, blur_sigma, intensity_offset):
    """Write synthetic .vol volumes (plus JSON sidecars) into a directory."""
    try:
        cfg = SynthConfig(
            shape=tuple(int(v) for v in shape.split(",")),
            max_instances=max_instances,
            radius_range=tuple(float(v) for v in radius_range.split(",")),
            noise_sigma=noise_sigma,
            blur_sigma=blur_sigma,
            intensity_offset=intensity_offset,
        )
    except (ConfigError, ValueError) as err:
        raise click.BadParameter(str(err))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        sample = generate(seed + i, cfg)
        write_vol(out / f"vol_{seed + i:06d}.vol", sample)
    click.echo(f"wrote {count} volumes to {out}")


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="TOML run config; defaults apply when omitted")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def train_cmd(config_path, out_path):
    """Train a model and write checkpoint + metrics CSV + loss figure."""
    cfg = load_config(config_path) if config_path else RunConfig()
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)

    def progress(row):
        extra = f"  dice={row['train_dice']:.3f}" if "train_dice" in row else ""
        click.echo(f"step {row['step']:5d}  loss={row['loss']:.4f}{extra}")

    model, log = train(cfg, out_path=out, progress=progress)
    csv_path = out.with_suffix(".metrics.csv")
    fields = ["step", "loss", "train_dice", "train_count_acc", "val_dice", "val_nsd", "val_count_acc"]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in log:
            writer.writerow({k: row.get(k, "") for k in fields})
    from .figures import save_loss_curve

    save_loss_curve(log, out.with_suffix(".loss.png"))
    click.echo(f"wrote {out}, {csv_path}, {out.with_suffix('.loss.png')}")


@main.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--json", "json_out", required=True, type=click.Path(dir_okay=False))
@click.option("--tau", default=1.0, show_default=True, help="NSD tolerance in voxels")
def eval_cmd(ckpt, data_dir, json_out, tau):
    """Evaluate a checkpoint on every .vol file in a directory."""
    _, model, _, _ = load_checkpoint(ckpt)
    samples = [read_vol(p) for p in sorted(Path(data_dir).glob("*.vol"))]
    if not samples:
        raise click.ClickException(f"no .vol files in {data_dir}")
    aggregate, rows = evaluate_samples(model, samples, tau=tau)
    _write_json(json_out, aggregate)
    csv_path = Path(json_out).with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["seed", "dice", "nsd", "count_pred", "count_gt"])
        writer.writeheader()
        writer.writerows(rows)
    from .figures import save_eval_bars

    save_eval_bars(rows, aggregate, _figure_path(json_out))
    click.echo(f"dice={aggregate['dice']:.4f} nsd={aggregate['nsd']:.4f} count_acc={aggregate['count_acc']:.2f}")


@main.command("predict")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--vol", "vol_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--point", required=True, help="prompt as d,h,w (voxel coordinates)")
@click.option("--json", "json_out", required=True, type=click.Path(dir_okay=False))
def predict_cmd(ckpt, vol_path, point, json_out):
    """Segment all instances from one point prompt."""
    from .rle import encode_mask

    _, model, _, _ = load_checkpoint(ckpt)
    sample = read_vol(vol_path)
    prompt = _parse_point(point)
    try:
        instances = model.predict_instances(sample.volume, prompt)
    except PromptBoundsError as err:
        raise click.ClickException(str(err))
    payload = {
        "point": list(prompt),
        "n_instances": len(instances),
        "instances": [
            {"score": score, "voxels": int(mask.sum()), "rle": encode_mask(mask)}
            for score, mask in instances
        ],
    }
    _write_json(json_out, payload)
    from .figures import save_prediction_overlay

    save_prediction_overlay(sample.volume, instances, prompt, _figure_path(json_out))


@main.command("robustness")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--vol", "vol_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--points", required=True, help='prompts as "d,h,w;d,h,w[;...]"')
@click.option("--json", "json_out", required=True, type=click.Path(dir_okay=False))
def robustness_cmd(ckpt, vol_path, points, json_out):
    """Pairwise agreement of predictions across several prompts."""
    _, model, _, _ = load_checkpoint(ckpt)
    sample = read_vol(vol_path)
    prompts = [_parse_point(p) for p in points.split(";") if p.strip()]
    try:
        result = prompt_robustness(model, sample, prompts)
    except PromptBoundsError as err:
        raise click.ClickException(str(err))
    payload = {
        "prompts": result["prompts"],
        "instance_counts": result["instance_counts"],
        "agreement": np.round(result["agreement"], 6).tolist(),
    }
    _write_json(json_out, payload)
    from .figures import save_agreement_heatmap

    save_agreement_heatmap(result["agreement"], _figure_path(json_out))


@main.command("serve")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--bind", default="127.0.0.1:8000", show_default=True, help="HOST:PORT")
def serve_cmd(ckpt, data_dir, bind):
    """Serve the prediction API (and the UI, if frontend/dist exists)."""
    import uvicorn

    from .server import create_app

    _, model, _, _ = load_checkpoint(ckpt)
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise click.BadParameter(f"--bind expects HOST:PORT, got {bind!r}")
    app = create_app(model, data_dir)
    uvicorn.run(app, host=host, port=int(port), log_level="info")


if __name__ == "__main__":
    sys.exit(main())
