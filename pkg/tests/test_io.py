import json

import numpy as np
import pytest

from wsplat import container
from wsplat.imageio import load_image, load_png, save_png, save_raw
from wsplat.scene import load_scene, save_scene, synth_scene


@pytest.fixture(scope="module")
def scene():
    return synth_scene(4, n_gaussians=15, n_train_views=3, n_test_views=1, resolution=32)


def test_container_round_trip(rng):
    arrays = {"a": rng.normal(size=(3, 4)), "b": np.arange(5, dtype=np.int64), "c": np.array([True, False])}
    data = container.encode(arrays, {"k": 1})
    back, meta = container.decode(data)
    assert meta == {"k": 1}
    assert np.array_equal(back["a"], arrays["a"]) and np.array_equal(back["b"], arrays["b"])
    assert back["c"].dtype == np.uint8 and list(back["c"]) == [1, 0]
    assert container.encode(arrays, {"k": 1}) == data


def test_container_rejects_bad_magic_and_truncation(tmp_path):
    data = container.encode({"a": np.ones(10)})
    with pytest.raises(ValueError, match="magic"):
        container.decode(b"XXXXXXXX" + data[8:])
    with pytest.raises(ValueError, match="truncated"):
        container.decode(data[:-3])


def test_atomic_write_leaves_no_temp(tmp_path):
    container.write_container(tmp_path / "x.wspl", {"a": np.zeros(2)})
    assert [p.name for p in tmp_path.iterdir()] == ["x.wspl"]


def test_raw_is_bit_exact(tmp_path, rng):
    img = rng.uniform(size=(5, 7, 3))
    save_raw(tmp_path / "i.raw", img)
    assert np.array_equal(load_image(tmp_path / "i.raw"), img)


def test_png_quantization(tmp_path, rng):
    img = rng.uniform(size=(6, 6, 3))
    save_png(tmp_path / "i.png", img)
    back = load_png(tmp_path / "i.png")
    enc = img ** (1 / 2.2)
    assert np.abs(back ** (1 / 2.2) - enc).max() <= 0.5 / 255 + 1e-9


def test_scene_round_trip(tmp_path, scene):
    path = save_scene(scene, tmp_path)
    back = load_scene(path)
    assert [v.id for v in back.train] == [v.id for v in scene.train]
    assert np.array_equal(back.train[0].image, scene.train[0].image)
    assert np.array_equal(back.test[0].camera.world_to_camera, scene.test[0].camera.world_to_camera)
    assert np.abs(back.point_cloud.positions - scene.point_cloud.positions).max() < 1e-6


def test_scene_errors(tmp_path, scene):
    with pytest.raises(FileNotFoundError, match="manifest"):
        load_scene(tmp_path / "missing.json")
    path = save_scene(scene, tmp_path / "s")
    m = json.loads(path.read_text())
    m["split"]["train"].append("ghost")
    path.write_text(json.dumps(m))
    with pytest.raises(ValueError, match="ghost"):
        load_scene(path)


def test_synth_is_deterministic(scene):
    again = synth_scene(4, n_gaussians=15, n_train_views=3, n_test_views=1, resolution=32)
    assert np.array_equal(again.train[1].image, scene.train[1].image)
    assert scene.train[0].image.max() > 0
