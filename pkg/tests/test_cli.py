"""CLI subcommands end to end on a tiny configuration."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from miq3d.cli import main
from miq3d.synthdata import read_vol

TINY_TOML = """
rng_seed = 3
n_queries = 5

[encoder]
volume_shape = [16, 16, 16]
patch_size = 4
embed_dim = 16
num_heads = 2
num_vit_blocks = 2
cnn_channels = [4, 8, 8]

[decoder]
num_layers = 2
num_heads = 2
ffn_hidden = 32

[optimizer]
steps = 6
batch_size = 1
eval_every = 3

[data]
train_count = 2

[synth]
shape = [16, 16, 16]
max_instances = 2
radius_range = [1.2, 2.0]
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    (root / "run.toml").write_text(TINY_TOML)

    result = runner.invoke(
        main,
        ["gen-data", "--out", str(root / "data"), "--count", "3", "--seed", "1000",
         "--shape", "16,16,16", "--max-instances", "2", "--radius-range", "1.2,2.0"],
    )
    assert result.exit_code == 0, result.output

    result = runner.invoke(
        main, ["train", "--config", str(root / "run.toml"), "--out", str(root / "model.npz")]
    )
    assert result.exit_code == 0, result.output
    return root, runner


class TestGenData:
    def test_writes_vol_files_and_sidecars(self, workspace):
        root, _ = workspace
        vols = sorted((root / "data").glob("*.vol"))
        assert len(vols) == 3
        assert all(p.with_suffix(".json").exists() for p in vols)
        sample = read_vol(vols[0])
        assert sample.shape == (16, 16, 16)

    def test_bad_flags_rejected(self, workspace):
        _, runner = workspace
        result = runner.invoke(main, ["gen-data", "--out", "/tmp/x", "--radius-range", "9"])
        assert result.exit_code != 0


class TestTrain:
    def test_writes_checkpoint_metrics_and_figure(self, workspace):
        root, _ = workspace
        assert (root / "model.npz").exists()
        metrics = (root / "model.metrics.csv").read_text().splitlines()
        assert metrics[0] == "step,loss,train_dice,train_count_acc,val_dice,val_nsd,val_count_acc"
        assert len(metrics) == 7  # header + 6 steps
        assert (root / "model.loss.png").stat().st_size > 0


class TestEval:
    def test_writes_json_csv_png(self, workspace):
        root, runner = workspace
        result = runner.invoke(
            main,
            ["eval", "--ckpt", str(root / "model.npz"), "--data", str(root / "data"),
             "--json", str(root / "eval.json")],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads((root / "eval.json").read_text())
        assert set(payload) == {"dice", "nsd", "count_acc", "n_volumes"}
        assert payload["n_volumes"] == 3
        assert (root / "eval.csv").exists()
        assert (root / "eval.png").stat().st_size > 0


class TestPredict:
    def test_writes_instances_and_overlay(self, workspace):
        root, runner = workspace
        vol = sorted((root / "data").glob("*.vol"))[0]
        result = runner.invoke(
            main,
            ["predict", "--ckpt", str(root / "model.npz"), "--vol", str(vol),
             "--point", "8,8,8", "--json", str(root / "pred.json")],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads((root / "pred.json").read_text())
        assert payload["point"] == [8.0, 8.0, 8.0]
        assert payload["n_instances"] == len(payload["instances"])
        assert (root / "pred.png").exists()

    def test_out_of_bounds_point_fails_cleanly(self, workspace):
        root, runner = workspace
        vol = sorted((root / "data").glob("*.vol"))[0]
        result = runner.invoke(
            main,
            ["predict", "--ckpt", str(root / "model.npz"), "--vol", str(vol),
             "--point", "99,0,0", "--json", str(root / "bad.json")],
        )
        assert result.exit_code != 0
        assert "outside volume" in result.output


class TestRobustness:
    def test_writes_agreement_matrix(self, workspace):
        root, runner = workspace
        vol = sorted((root / "data").glob("*.vol"))[0]
        result = runner.invoke(
            main,
            ["robustness", "--ckpt", str(root / "model.npz"), "--vol", str(vol),
             "--points", "8,8,8;7,9,8", "--json", str(root / "rob.json")],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads((root / "rob.json").read_text())
        matrix = np.array(payload["agreement"])
        assert matrix.shape == (2, 2)
        assert matrix[0, 0] == matrix[1, 1] == 1.0
        assert (root / "rob.png").exists()


class TestServeValidation:
    def test_bad_bind_rejected(self, workspace):
        root, runner = workspace
        result = runner.invoke(
            main,
            ["serve", "--ckpt", str(root / "model.npz"), "--data", str(root / "data"),
             "--bind", "nonsense"],
        )
        assert result.exit_code != 0
