import math

import numpy as np
import pytest

from fd import central_difference, relative_error
from wsplat import autodiff as ad
from wsplat import relight as R


def positive_env(rng):
    c = np.zeros((3, 9))
    c[:, 0] = 2 * math.sqrt(math.pi) * rng.uniform(0.5, 1.5, size=3)
    c[:, 1:] = 0.15 * rng.normal(size=(3, 8))
    return c


def mc_irradiance(coeffs, normal, samples):
    cos = np.maximum(samples @ normal, 0.0)
    return 4 * math.pi * np.mean(R.radiance(coeffs, samples) * cos[:, None], axis=0)


def test_basis_constant_and_unit_check():
    assert np.isclose(R.sh_basis([0, 0, 1])[0], 1 / (2 * math.sqrt(math.pi)))
    with pytest.raises(ValueError, match="unit"):
        R.sh_basis([0, 0, 2])


def test_basis_orthonormal():
    # Lebedev-free check: dense Fibonacci sphere quadrature
    n = 20000
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = math.pi * (1 + 5**0.5) * i
    r = np.sqrt(1 - z * z)
    d = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    y = R.sh_basis_batch(d)
    gram = 4 * math.pi * (y.T @ y) / n
    assert np.abs(gram - np.eye(9)).max() < 1e-3


def test_constant_environment_examples():
    env = R.SHEnvironment.constant()
    n = np.array([0.0, 0.0, 1.0])
    assert np.allclose(R._quadratic(env.matrix, n), 1.0)
    assert np.allclose(R.irradiance(env.coeffs, n), math.pi)
    assert np.allclose(R.warmup_color(0.5, n, env.matrix), 0.5)


def test_env_matrix_symmetric_and_zero():
    rng = np.random.default_rng(0)
    m = R.env_matrix(rng.normal(size=(3, 9)))
    assert np.allclose(m, np.transpose(m, (0, 2, 1)))
    assert np.all(R.env_matrix(np.zeros((3, 9))) == 0)


def test_irradiance_matches_monte_carlo(rng):
    samples = R.sphere_samples(200000, seed=5)
    worst = 0.0
    for _ in range(10):
        c = positive_env(rng)
        assert R.radiance(c, samples).min() > 0
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        closed, mc = R.irradiance(c, n), mc_irradiance(c, n, samples)
        worst = max(worst, np.abs(closed - mc).max() / np.abs(mc).max())
    assert worst < 0.01


def test_cosine_lobe_coefficients_reconstruct_irradiance(rng):
    c = positive_env(rng)
    n = np.array([0.6, 0.0, 0.8])
    closed = R.irradiance(c, n)
    via_lobe = c @ R.cosine_lobe_coeffs(n)
    assert np.allclose(closed, via_lobe)


def test_relight_with_full_visibility_equals_warmup(rng):
    c = positive_env(rng)
    n = np.array([0.0, 0.6, 0.8])
    albedo = np.array([0.2, 0.5, 0.9])
    full = R.relight_color(albedo, R.cosine_lobe_coeffs(n), c)
    assert np.allclose(full, R.warmup_color(albedo, n, R.env_matrix(c)))
    assert np.all(R.relight_color(albedo, np.zeros(9), c) == 0)


def test_tape_colors_match_numpy(rng):
    c = positive_env(rng)
    n = rng.normal(size=(6, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    albedo = rng.uniform(size=(6, 3))
    tape = R.warmup_color_tape(ad.Tensor(albedo), ad.Tensor(n), ad.Tensor(c)).value
    ref = np.stack([R.warmup_color(albedo[i], n[i], R.env_matrix(c)) for i in range(6)])
    assert np.allclose(tape, ref)
    vis = rng.normal(size=(6, 9))
    assert np.allclose(R.relight_color_tape(ad.Tensor(albedo), ad.Tensor(vis), ad.Tensor(c)).value,
                       R.relight_color(albedo, vis, c))


def test_sh_loss_zero_for_nonnegative_and_positive_otherwise(rng):
    dirs = R.sphere_samples(512)
    assert R.sh_loss(positive_env(rng), dirs).item() == 0.0
    assert R.sh_loss(-positive_env(rng), dirs).item() > 0.0
    with pytest.raises(ValueError):
        R.sphere_samples(100)


def test_sh_loss_gradient(rng):
    dirs = R.sphere_samples(512)
    c0 = rng.normal(size=(3, 9))
    c = ad.Tensor(c0, True)
    ad.backward(R.sh_loss(c, dirs))
    num = central_difference(lambda x: R.sh_loss(x, dirs).item(), c0, 1e-6)
    assert relative_error(c.grad, num, 1e-8) < 1e-4


def test_normal_is_smallest_axis_and_faces_camera():
    q = np.array([[1.0, 0, 0, 0]])
    n = R.normal_of([[0.3, 0.2, 0.01]], q)
    assert np.allclose(n, [[0, 0, 1]])
    flipped = R.normal_of([[0.3, 0.2, 0.01]], q, [[0, 0, 0]], [0, 0, -5])
    assert np.allclose(flipped, [[0, 0, -1]])
    tie = R.normal_of([[0.1, 0.1, 0.1]], q)
    assert np.allclose(tie, [[1, 0, 0]])


def test_normal_tape_matches_numpy(rng):
    s = rng.uniform(0.01, 0.3, size=(8, 3))
    q = rng.normal(size=(8, 4))
    m = rng.normal(size=(8, 3))
    cam = np.array([0.0, -3.0, 1.0])
    tape = R.normal_of_tape(ad.Tensor(s), ad.Tensor(q), ad.Tensor(m), cam).value
    assert np.allclose(tape, R.normal_of(s, q, m, cam))


def test_structural_features():
    img = np.random.default_rng(0).uniform(size=(64, 48, 3))
    feat = R.structural_features(img, image_id="v0")
    assert feat.vector.shape == (R.FEATURE_SIZE,) and feat.image_id == "v0"
    flat = R.structural_features(np.full((32, 32, 3), 0.5))
    assert np.allclose(flat.vector, flat.vector[0])
    with pytest.raises(ValueError):
        R.structural_features(np.ones((3, 3)))


def test_area_matrix_rows_sum_to_one():
    for n_in, n_out in [(16, 16), (17, 16), (5, 16), (40, 16)]:
        assert np.allclose(R.area_matrix(n_in, n_out).sum(axis=1), 1.0)
    assert np.allclose(R.area_matrix(16, 16), np.eye(16))


def test_features_to_env_shape():
    mlp = ad.Mlp([R.FEATURE_SIZE, 8, 27], rng=np.random.default_rng(0))
    env = R.features_to_env(np.zeros(R.FEATURE_SIZE), mlp)
    assert env.shape == (3, 9)
