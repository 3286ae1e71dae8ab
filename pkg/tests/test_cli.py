"""Command-line round trips over the toy stack."""

import json

import pytest
import torch
import yaml

from latedit.cli import main
from latedit.containers import load_latent, save_latent
from latedit.core import Latent
from latedit.latent_ops import load_edit_vector

from conftest import assert_bitwise_equal


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One toy dataset + one tiny training run, shared by the round-trip tests."""
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    assert main(["toy-data", "--out", str(data_dir), "--count", "3",
                 "--grid-size", "2"]) == 0

    cfg = {
        "camera_train": {"render_resolution": 12, "elevation_deg": 60.0},
        "guidance_global": {"gamma_image": 1.0, "gamma_text": 1.0},
        "tau": 0,
        "train": {
            "epochs": 2,
            "batch_size": 2,
            "learning_rate": 3e-3,
            "weight_decay": 5.0,
            "optimizer": "sgd",
            "lr_schedule": "cosine",
            "warmup_epochs": 0,
            "t_min_frac": 0.7,
            "seed": 0,
        },
        "task": {"grid_size": 2},
    }
    cfg_path = root / "train.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))

    run_dir = root / "run"
    assert main(["train", "--config", str(cfg_path), "--data", str(data_dir),
                 "--out", str(run_dir)]) == 0
    return {"root": root, "data": data_dir, "config": cfg_path, "run": run_dir,
            "ckpt": run_dir / "editor_final.ckpt"}


def test_toy_data_writes_manifest_and_latents(workspace):
    data_dir = workspace["data"]
    manifest = json.loads((data_dir / "dataset.json").read_text())
    assert len(manifest["entries"]) == 3
    assert manifest["instruction_validity"] == {"shift the colors": ["toy"]}
    for entry in manifest["entries"]:
        assert (data_dir / entry["latent"]).exists()
    eval_set = json.loads((data_dir / "eval_set.json").read_text())
    assert len(eval_set["pairs"]) == 3


def test_train_writes_checkpoint_and_metrics(workspace, capsys):
    assert workspace["ckpt"].exists()
    assert (workspace["run"] / "metrics.jsonl").exists()


def test_train_from_inline_toy_dataset(workspace, tmp_path, capsys):
    out = tmp_path / "run2"
    assert main(["train", "--config", str(workspace["config"]),
                 "--data", "toy:4", "--out", str(out)]) == 0
    captured = capsys.readouterr()
    assert "steps" in captured.out
    assert (out / "editor_final.ckpt").exists()


def test_train_infers_grid_size_from_dataset(workspace, tmp_path):
    # same config minus the explicit task section: the grid-2 latents on disk
    # must drive the editor geometry
    cfg = yaml.safe_load(workspace["config"].read_text())
    del cfg["task"]
    cfg_path = tmp_path / "no_task.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    out = tmp_path / "run_inferred"
    assert main(["train", "--config", str(cfg_path),
                 "--data", str(workspace["data"]), "--out", str(out)]) == 0
    assert (out / "editor_final.ckpt").exists()


def test_train_missing_dataset_dir_exits_2(workspace, tmp_path, capsys):
    code = main(["train", "--config", str(workspace["config"]),
                 "--data", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_evaluate_round_trip(workspace, tmp_path, capsys):
    out = tmp_path / "report"
    assert main(["evaluate", "--ckpt", str(workspace["ckpt"]),
                 "--eval-set", str(workspace["data"] / "eval_set.json"),
                 "--out", str(out), "--views", "2", "--render-res", "12"]) == 0
    assert (out / "report.json").exists()
    assert (out / "report.csv").exists()
    assert (out / "report.png").exists()
    report = json.loads((out / "report.json").read_text())
    assert len(report["per_pair"]) == 3
    assert "clip_sim" in capsys.readouterr().out


def test_evaluate_full_scale_embedder_exits_3(workspace, tmp_path, capsys):
    code = main(["evaluate", "--ckpt", str(workspace["ckpt"]),
                 "--eval-set", str(workspace["data"] / "eval_set.json"),
                 "--out", str(tmp_path / "r"), "--embedder", "clip"])
    assert code == 3
    assert "backend unavailable" in capsys.readouterr().err


def test_render_turntable_frames(workspace, tmp_path):
    data_dir = workspace["data"]
    out = tmp_path / "frames"
    assert main(["render", "--latent", str(data_dir / "latents" / "toy000.lat"),
                 "--out", str(out), "--frames", "2", "--res", "12", "--depth"]) == 0
    assert (out / "frame_000.png").exists()
    assert (out / "frame_001.png").exists()
    assert (out / "depth_000.png").exists()


def test_latent_op_scale(workspace, tmp_path):
    src_path = workspace["data"] / "latents" / "toy000.lat"
    src = load_latent(src_path)
    edit_path = tmp_path / "edit.lat"
    save_latent(edit_path, Latent(src.data + 1.0, src.codec_id))
    out_path = tmp_path / "half.lat"
    assert main(["latent-op", "scale", "--src", str(src_path),
                 "--edit", str(edit_path), "--eta", "0.5",
                 "--out", str(out_path)]) == 0
    edit = load_latent(edit_path)
    out = load_latent(out_path)
    assert_bitwise_equal(out.data, src.data + 0.5 * (edit.data - src.data))


def test_latent_op_chain(workspace, tmp_path):
    out = tmp_path / "chain"
    assert main(["latent-op", "chain", "--ckpt", str(workspace["ckpt"]),
                 "--latent", str(workspace["data"] / "latents" / "toy001.lat"),
                 "--prompt", "shift the colors", "--prompt", "shift the colors",
                 "--out", str(out)]) == 0
    assert (out / "step_00.lat").exists()
    assert (out / "step_01.lat").exists()


def test_latent_op_chain_unknown_prompt_exits_2(workspace, tmp_path, capsys):
    code = main(["latent-op", "chain", "--ckpt", str(workspace["ckpt"]),
                 "--latent", str(workspace["data"] / "latents" / "toy001.lat"),
                 "--prompt", "make it gold", "--out", str(tmp_path / "chain")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_latent_op_vector_round_trip(workspace, tmp_path):
    src_path = workspace["data"] / "latents" / "toy000.lat"
    src = load_latent(src_path)
    edit_path = tmp_path / "edit.lat"
    save_latent(edit_path, Latent(src.data + 0.25, src.codec_id))
    vec_path = tmp_path / "shift.vec"
    assert main(["latent-op", "extract-vector", "--src", str(src_path),
                 "--edit", str(edit_path), "--instruction", "shift the colors",
                 "--out", str(vec_path)]) == 0
    applied_path = tmp_path / "applied.lat"
    assert main(["latent-op", "apply-vector",
                 "--latent", str(workspace["data"] / "latents" / "toy002.lat"),
                 "--vector", str(vec_path), "--eta", "1.0",
                 "--out", str(applied_path)]) == 0
    vec = load_edit_vector(vec_path)
    assert vec.instruction_text == "shift the colors"
    target = load_latent(workspace["data"] / "latents" / "toy002.lat")
    applied = load_latent(applied_path)
    assert_bitwise_equal(applied.data, target.data + 1.0 * vec.delta)


def test_optimize_latent_round_trip(workspace, tmp_path, capsys):
    src_path = workspace["data"] / "latents" / "toy000.lat"
    out_path = tmp_path / "optimized.lat"
    assert main(["optimize-latent", "--latent", str(src_path),
                 "--prompt", "shift the colors",
                 "--config", str(workspace["config"]),
                 "--steps", "10", "--learning-rate", "3e-2",
                 "--out", str(out_path)]) == 0
    assert out_path.exists()
    out = load_latent(out_path)
    src = load_latent(src_path)
    assert not torch.equal(out.data, src.data)
    assert "optimized latent written" in capsys.readouterr().out
