import dataclasses
import math

import numpy as np
import pytest

from wsplat import autodiff as ad
from wsplat import trainer as T
from wsplat.scene import synth_scene


@pytest.fixture(scope="module")
def tiny_scene():
    return synth_scene(3, n_gaussians=20, n_train_views=4, n_test_views=2, resolution=32)


def tiny_config(**kw):
    base = dict(voxel_size=0.1, eps_occ=0.05, iterations=30, densify_interval=10, seed=2)
    base.update(kw)
    return T.TrainConfig(**base)


@pytest.fixture(scope="module")
def tiny_run(tiny_scene, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return T.train(tiny_scene, tiny_config(), out), out


def test_config_defaults_and_validation():
    cfg = T.TrainConfig(iterations=100)
    assert cfg.warmup_iterations == 30 and cfg.densify_until == 60
    with pytest.raises(ValueError):
        T.TrainConfig(iterations=10, warmup_iterations=10)
    with pytest.raises(ValueError):
        T.TrainConfig(voxel_size=0)
    back = T.TrainConfig.from_dict(cfg.to_dict())
    assert back == cfg


def test_variants():
    cfg = T.TrainConfig()
    assert not cfg.for_variant("no_3d_wavelet").use_3d_wavelet
    assert cfg.for_variant("no_lw_loss").loss.lambda_lw == 0
    assert cfg.for_variant("haar").loss.family == "haar"
    with pytest.raises(ValueError, match="unknown variant"):
        cfg.for_variant("bogus")


def test_model_layout(tiny_scene):
    model = T.init_model(tiny_scene, tiny_config())
    assert model.branches == ["low", "high"]
    assert model.heads["low"] is not model.heads["high"]
    shared = T.init_model(tiny_scene, tiny_config(individual_strategy=False))
    assert shared.heads["low"] is shared.heads["high"]
    single = T.init_model(tiny_scene, tiny_config(use_3d_wavelet=False))
    assert single.branches == ["low"]
    assert len(single.anchors["low"]) >= len(model.anchors["low"])
    assert model.env_mlp.widths == [256, 64, 27] and model.vis_mlp.widths == [3, 64, 9]


def test_stage_switch(tiny_scene):
    model = T.init_model(tiny_scene, tiny_config(iterations=100))
    assert not model.in_relight_stage(29) and model.in_relight_stage(30)


def test_forward_image_shape_and_range(tiny_scene):
    model = T.init_model(tiny_scene, tiny_config())
    cam = tiny_scene.train[0].camera
    frame = T.forward(model, cam, ad.Tensor(model.eval_env()), False)
    assert frame.image.shape == (32, 32, 3)
    assert np.all(np.isfinite(frame.image.value))


def test_training_lowers_loss_and_writes_outputs(tiny_run):
    result, out = tiny_run
    totals = [r["total"] for r in result.history]
    assert len(totals) == 30
    assert np.mean(totals[-5:]) < np.mean(totals[:5])
    assert (out / "checkpoint.wspl").is_file()
    lines = (out / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,l1,ssim,vol,sh,lw,total" and len(lines) == 31


def test_checkpoint_round_trip_renders_identically(tiny_run, tiny_scene):
    result, out = tiny_run
    model, adam = T.load_checkpoint(out / "checkpoint.wspl")
    cam = tiny_scene.test[0].camera
    assert np.array_equal(T.render(model, cam), T.render(result.model, cam))
    assert model.anchor_count() == result.model.anchor_count()
    assert adam.state


def test_deterministic_runs(tiny_scene):
    a = T.train(tiny_scene, tiny_config(iterations=12, densify_interval=6))
    b = T.train(tiny_scene, tiny_config(iterations=12, densify_interval=6))
    ma, mb = T.evaluate(a.model, tiny_scene.test), T.evaluate(b.model, tiny_scene.test)
    assert T.metrics_json(ma) == T.metrics_json(mb)
    assert [r["total"] for r in a.history] == [r["total"] for r in b.history]


def test_zero_iterations_is_valid(tiny_scene, tmp_path):
    result = T.train(tiny_scene, tiny_config(iterations=0), tmp_path)
    assert result.history == [] and result.checkpoint_path.is_file()
    assert (tmp_path / "loss.csv").read_text() == "step,l1,ssim,vol,sh,lw,total\n"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_iteration(tiny_scene):
    cfg = tiny_config(iterations=5)
    cfg = dataclasses.replace(cfg, lr_heads=1e300)
    with pytest.raises(T.TrainingDiverged) as err:
        T.train(tiny_scene, cfg)
    assert 0 <= err.value.iteration < 5


def test_evaluate_metrics(tiny_run, tiny_scene):
    result, _ = tiny_run
    m = T.evaluate(result.model, tiny_scene.test)
    assert len(m["views"]) == 2
    assert all(math.isfinite(r["psnr"]) and -1 <= r["ssim"] <= 1 for r in m["views"])
    gt = T.evaluate_images((v.id, v.image, v.image) for v in tiny_scene.test)
    assert gt["mean_psnr"] == 99.0 and gt["mean_ssim"] == 1.0


def test_ablation_helpers(tmp_path):
    table = [{"variant": "full", "psnr": 30.0, "ssim": 0.9},
             {"variant": "haar", "psnr": 30.05, "ssim": 0.9},
             {"variant": "db8", "psnr": 30.5, "ssim": 0.91}]
    assert T.ablation_inversions(table) == ["db8"]
    T.write_table_csv(table, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "variant,psnr,ssim"


def test_ablate_runs_variants(tiny_scene):
    table = T.ablate(tiny_scene, tiny_config(iterations=6, densify_interval=3), ["full", "no_lw_loss"])
    assert [r["variant"] for r in table] == ["full", "no_lw_loss"]
