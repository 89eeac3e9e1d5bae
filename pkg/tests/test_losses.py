import csv
import math

import numpy as np
import pytest
from scipy import ndimage

from fd import central_difference, relative_error
from wsplat import autodiff as ad
from wsplat import losses as L
from wsplat import wavelet


def ssim_oracle(a, b):
    def f(x):
        return ndimage.gaussian_filter(x, 1.5, mode="constant", truncate=5 / 1.5)

    vals = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx, my = f(x), f(y)
        sxx, syy, sxy = f(x * x) - mx * mx, f(y * y) - my * my, f(x * y) - mx * my
        vals.append(((2 * mx * my + L.SSIM_C1) * (2 * sxy + L.SSIM_C2))
                    / ((mx * mx + my * my + L.SSIM_C1) * (sxx + syy + L.SSIM_C2)))
    return float(np.mean(vals))


def test_l1_examples():
    assert L.l1_loss(np.zeros((4, 4, 3)), np.zeros((4, 4, 3))).item() == 0
    assert np.isclose(L.l1_loss(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.25)).item(), 0.25)
    with pytest.raises(ValueError, match="shapes"):
        L.l1_loss(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_ssim_identity_and_oracle(rng):
    a = rng.uniform(size=(23, 19, 3))
    assert L.ssim(a, a).item() == 1.0
    b = np.clip(a + 0.1 * rng.normal(size=a.shape), 0, 1)
    assert abs(L.ssim(a, b).item() - ssim_oracle(a, b)) < 1e-10


def test_psnr_examples():
    a = np.zeros((4, 4, 3))
    assert L.psnr(a, a) == L.PSNR_CAP
    assert np.isclose(L.psnr(a, np.full_like(a, 0.1)), 20.0)


def test_volume_reg_example():
    assert L.volume_reg(np.array([[0.1, 0.2, 0.3]])).item() == 0.006
    assert L.volume_reg(np.zeros((0, 3))).item() == 0.0


def test_pyramid_round_trip_and_sizes(rng):
    img = rng.uniform(size=(37, 30, 3))
    bands = L.laplacian_pyramid(img, 3)
    assert len(bands) == 3
    assert bands[0].shape == img.shape and bands[1].shape[:2] == (19, 15) and bands[2].shape[:2] == (10, 8)
    assert np.abs(L.reconstruct_pyramid(bands) - img).max() < 1e-12
    with pytest.raises(ValueError):
        L.laplacian_pyramid(np.ones((4, 4)), 3)


def test_blur_preserves_constants():
    for n in (1, 2, 5, 16):
        assert np.allclose(L.blur_matrix(n).sum(axis=1), 1.0)
    const = np.full((16, 16, 1), 0.7)
    bands = L.laplacian_pyramid(const, 3)
    assert np.abs(bands[0]).max() < 1e-12 and np.allclose(bands[-1], 0.7)


def test_wavelet_bands_match_transform(rng):
    x = rng.normal(size=(16, 12))
    bands = L.wavelet_bands(ad.Tensor(x), "coif1", 2)
    dec = wavelet.dwt2d(x, "coif1", 2)
    assert len(bands) == 7
    for got, ref in zip(bands[:3], dec.details[0]):
        assert np.allclose(got.value, ref)
    assert np.allclose(bands[-1].value, dec.approx)


def test_lw_loss_zero_and_positive(rng):
    a = rng.uniform(size=(16, 16, 3))
    assert L.lw_loss(a, a).item() == 0.0
    assert L.lw_loss(a, a + 0.01).item() > 0.0


def test_total_loss_parts_and_weights(rng):
    a, b = rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))
    scales = rng.uniform(0.01, 0.1, size=(5, 3))
    env = rng.normal(size=(3, 9))
    dirs = np.random.default_rng(0).normal(size=(512, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    cfg = L.LossConfig()
    total, parts = L.total_loss(a, b, scales, env, cfg, dirs)
    assert set(parts) == set(L.COMPONENTS)
    expected = (0.8 * parts["l1"].item() + 0.2 * parts["ssim"].item() + 0.01 * parts["vol"].item()
                + 0.05 * parts["sh"].item() + 0.1 * parts["lw"].item())
    assert math.isclose(total.item(), expected, rel_tol=1e-12)
    assert math.isclose(parts["ssim"].item(), 1 - L.ssim(a, b).item(), rel_tol=1e-12)


def test_total_loss_gradient_matches_fd(rng):
    a0 = rng.uniform(size=(12, 10, 3))
    b = rng.uniform(size=(12, 10, 3))
    cfg = L.LossConfig()
    x = ad.Tensor(a0, True)
    total, _ = L.total_loss(x, b, np.ones((1, 3)) * 0.1, None, cfg)
    ad.backward(total)
    idx = rng.choice(a0.size, 12, replace=False)
    num = central_difference(lambda v: L.total_loss(v, b, np.ones((1, 3)) * 0.1, None, cfg)[0].item(), a0, 1e-6, idx)
    assert relative_error(x.grad.flat[idx], num.flat[idx], 1e-6) < 1e-3


def test_config_validation():
    with pytest.raises(ValueError):
        L.LossConfig(lambda_l1=-1)
    with pytest.raises(ValueError):
        L.LossConfig(family="nope")
    assert L.LossConfig().to_dict()["pyramid_levels"] == 3


def test_loss_csv(tmp_path):
    L.write_loss_csv([], tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text() == "step,l1,ssim,vol,sh,lw,total\n"
    row = {"step": 1, "l1": 0.5, "ssim": 0.1, "vol": 0.0, "sh": 0.0, "lw": 0.2, "total": 0.9}
    L.write_loss_csv([row], tmp_path / "one.csv")
    back = list(csv.DictReader(open(tmp_path / "one.csv")))
    assert float(back[0]["total"]) == 0.9 and back[0]["step"] == "1"
