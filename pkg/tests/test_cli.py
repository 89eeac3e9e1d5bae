import json

import numpy as np
import pytest

from wsplat.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from wsplat.ply import save_ply
from wsplat.pointfield import PointCloud


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    assert main(["synth", "--out", str(out), "--n-gaussians", "15", "--train-views", "3",
                 "--test-views", "1", "--resolution", "32"]) == EXIT_OK
    return out


def test_decompose(tmp_path, capsys, rng):
    save_ply(PointCloud(rng.normal(scale=0.3, size=(500, 3))), tmp_path / "p.ply")
    rc = main(["decompose", "--ply", str(tmp_path / "p.ply"), "--voxel-size", "0.1", "--out", str(tmp_path / "o")])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "low seeds" in out and "additivity residual" in out
    assert (tmp_path / "o" / "split.json").is_file()


def test_missing_input_is_usage_error(tmp_path, capsys):
    rc = main(["decompose", "--ply", str(tmp_path / "none.ply"), "--voxel-size", "0.1", "--out", str(tmp_path)])
    assert rc == EXIT_USAGE and "none.ply" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, scene_dir, capsys):
    (tmp_path / "c.toml").write_text("iterations = 2\n[loss]\nlambda_zz = 1.0\n")
    rc = main(["train", "--scene", str(scene_dir / "manifest.json"), "--config", str(tmp_path / "c.toml"),
               "--out", str(tmp_path / "r")])
    assert rc == EXIT_USAGE and "loss.lambda_zz" in capsys.readouterr().err


def test_bad_threads(scene_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("WSPLAT_THREADS", "many")
    assert main(["eval", "--scene", str(scene_dir / "manifest.json"), "--ground-truth"]) == EXIT_USAGE


def test_train_render_eval(tmp_path, scene_dir, capsys):
    manifest = str(scene_dir / "manifest.json")
    (tmp_path / "c.toml").write_text("voxel_size = 0.1\neps_occ = 0.05\ndensify_interval = 2\n")
    rc = main(["--seed", "3", "train", "--scene", manifest, "--config", str(tmp_path / "c.toml"),
               "--iterations", "4", "--out", str(tmp_path / "run")])
    assert rc == EXIT_OK
    ckpt = str(tmp_path / "run" / "checkpoint.wspl")
    assert main(["render", "--checkpoint", ckpt, "--scene", manifest, "--raw", "--out", str(tmp_path / "img")]) == EXIT_OK
    assert len(list((tmp_path / "img").glob("*.png"))) == 1
    assert main(["render", "--checkpoint", ckpt, "--scene", manifest, "--views", "nope",
                 "--out", str(tmp_path / "img")]) == EXIT_USAGE
    capsys.readouterr()
    assert main(["eval", "--scene", manifest, "--checkpoint", ckpt, "--out", str(tmp_path / "m")]) == EXIT_OK
    assert "mean" in capsys.readouterr().out
    metrics = json.loads((tmp_path / "m" / "metrics.json").read_text())
    assert np.isfinite(metrics["mean_psnr"])
    assert (tmp_path / "m" / "metrics.csv").read_text().startswith("id,psnr,ssim")


def test_eval_ground_truth(tmp_path, scene_dir):
    assert main(["eval", "--scene", str(scene_dir / "manifest.json"), "--ground-truth",
                 "--out", str(tmp_path)]) == EXIT_OK
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["mean_psnr"] == 99.0 and metrics["mean_ssim"] == 1.0


def test_ablate_rejects_unknown_variant(scene_dir, capsys):
    rc = main(["ablate", "--scene", str(scene_dir / "manifest.json"), "--variants", "full,fancy"])
    assert rc == EXIT_USAGE and "fancy" in capsys.readouterr().err


def test_divergence_exit_code(tmp_path, scene_dir):
    (tmp_path / "c.toml").write_text("voxel_size = 0.1\neps_occ = 0.05\nlr_heads = 1e300\n")
    with pytest.warns(RuntimeWarning):
        rc = main(["train", "--scene", str(scene_dir / "manifest.json"), "--config", str(tmp_path / "c.toml"),
                   "--iterations", "5", "--out", str(tmp_path / "r")])
    assert rc == EXIT_NUMERIC


def test_no_command_is_usage():
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 2
