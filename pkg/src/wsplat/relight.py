"""Degree-2 spherical-harmonics lighting for high-frequency Gaussians.

Coefficient order is ``(l, m)`` = (0,0), (1,-1), (1,0), (1,1), (2,-2),
(2,-1), (2,0), (2,1), (2,2), using real harmonics without the Condon-Shortley
phase.  Environment coefficients are stored as a ``(3, 9)`` array, one row
per color channel.

The diffuse ``1/pi`` is folded into the environment matrix, so
``n^T M n`` is the outgoing radiance of a unit-albedo surface and
``pi * n^T M n`` is the irradiance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import wavelet

SH_COUNT = 9
FEATURE_SIDE = 16
FEATURE_SIZE = FEATURE_SIDE * FEATURE_SIDE
REC601 = np.array([0.299, 0.587, 0.114])

K00 = 0.5 / math.sqrt(math.pi)
K1 = math.sqrt(3.0 / (4.0 * math.pi))
K2 = 0.5 * math.sqrt(15.0 / math.pi)
K20 = 0.25 * math.sqrt(5.0 / math.pi)
K22 = 0.25 * math.sqrt(15.0 / math.pi)

# Clamped-cosine convolution weights per band.
COSINE_LOBE = np.array([math.pi] + [2.0 * math.pi / 3.0] * 3 + [math.pi / 4.0] * 5)


def _check_unit(v: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError(f"{what} must be unit length (got norm {norms.ravel()[0]:.6g})")


def sh_basis_batch(directions) -> np.ndarray:
    d = np.asarray(directions, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    return np.stack(
        [
            np.full_like(x, K00),
            K1 * y,
            K1 * z,
            K1 * x,
            K2 * x * y,
            K2 * y * z,
            K20 * (3.0 * z * z - 1.0),
            K2 * x * z,
            K22 * (x * x - y * y),
        ],
        axis=-1,
    )


def sh_basis(direction) -> np.ndarray:
    """The nine real SH values at a unit direction."""
    d = np.asarray(direction, dtype=np.float64)
    _check_unit(d, "direction")
    return sh_basis_batch(d)


def sh_basis_tape(directions: ad.Tensor) -> ad.Tensor:
    x, y, z = directions[:, 0], directions[:, 1], directions[:, 2]
    ones = ad.Tensor(np.full(directions.shape[0], K00))
    return ad.stack(
        [
            ones,
            y * K1,
            z * K1,
            x * K1,
            x * y * K2,
            y * z * K2,
            (z * z * 3.0 - 1.0) * K20,
            x * z * K2,
            (x * x - y * y) * K22,
        ],
        axis=1,
    )


def env_matrix(coeffs) -> np.ndarray:
    """Quadratic-form matrices ``(C, 4, 4)`` such that for a homogeneous
    normal ``[n, 1]``, ``[n,1]^T M [n,1]`` is the unit-albedo diffuse radiance."""
    c = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    a0, a1, a2 = COSINE_LOBE[0], COSINE_LOBE[1], COSINE_LOBE[4]
    l00, l1m1, l10, l11, l2m2, l2m1, l20, l21, l22 = (c[:, i] for i in range(9))
    m = np.zeros((len(c), 4, 4))
    m[:, 0, 0] = a2 * K22 * l22
    m[:, 1, 1] = -a2 * K22 * l22
    m[:, 2, 2] = 3.0 * a2 * K20 * l20
    m[:, 3, 3] = a0 * K00 * l00 - a2 * K20 * l20
    m[:, 0, 1] = m[:, 1, 0] = 0.5 * a2 * K2 * l2m2
    m[:, 0, 2] = m[:, 2, 0] = 0.5 * a2 * K2 * l21
    m[:, 1, 2] = m[:, 2, 1] = 0.5 * a2 * K2 * l2m1
    m[:, 0, 3] = m[:, 3, 0] = 0.5 * a1 * K1 * l11
    m[:, 1, 3] = m[:, 3, 1] = 0.5 * a1 * K1 * l1m1
    m[:, 2, 3] = m[:, 3, 2] = 0.5 * a1 * K1 * l10
    return m / math.pi


def _quadratic(m: np.ndarray, normals: np.ndarray) -> np.ndarray:
    n = np.asarray(normals, dtype=np.float64)
    h = np.concatenate([n, np.ones(n.shape[:-1] + (1,))], axis=-1)
    return np.einsum("...i,cij,...j->...c", h, m, h)


def irradiance(coeffs, normals) -> np.ndarray:
    """Cosine-weighted incident radiance integrated over the hemisphere."""
    return math.pi * _quadratic(env_matrix(coeffs), normals)


def radiance(coeffs, directions) -> np.ndarray:
    """Environment radiance per channel, shape ``(..., C)``."""
    return sh_basis_batch(directions) @ np.atleast_2d(coeffs).T


@dataclass
class SHEnvironment:
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(3, SH_COUNT)

    @property
    def matrix(self) -> np.ndarray:
        return env_matrix(self.coeffs)

    @classmethod
    def constant(cls, value: float = 1.0) -> "SHEnvironment":
        c = np.zeros((3, SH_COUNT))
        c[:, 0] = value * 2.0 * math.sqrt(math.pi)
        return cls(c)

    @classmethod
    def mean(cls, envs) -> "SHEnvironment":
        envs = list(envs)
        return cls(np.mean([e.coeffs for e in envs], axis=0))


def warmup_color(albedo, normal, m_env) -> np.ndarray:
    """Unshadowed transfer: albedo times ``n^T M n`` per channel."""
    n = np.asarray(normal, dtype=np.float64)
    _check_unit(n, "normal")
    return np.asarray(albedo, dtype=np.float64) * _quadratic(np.asarray(m_env), n)


def relight_color(albedo, visibility, coeffs) -> np.ndarray:
    """Shadowed transfer: the SH inner product of visibility-weighted transfer
    coefficients ``(..., 9)`` with the environment, times albedo."""
    vis = np.asarray(visibility, dtype=np.float64)
    return np.asarray(albedo, dtype=np.float64) * (vis @ np.atleast_2d(coeffs).T) / math.pi


def cosine_lobe_coeffs(normal) -> np.ndarray:
    """SH projection of ``max(w . n, 0)`` for a unit normal."""
    return COSINE_LOBE * sh_basis(normal)


# -- tape versions used during training --------------------------------------


def warmup_color_tape(albedo: ad.Tensor, normals: ad.Tensor, coeffs: ad.Tensor) -> ad.Tensor:
    weights = ad.Tensor((COSINE_LOBE / math.pi)[:, None])
    transfer = sh_basis_tape(normals) @ (ad.moveaxis(coeffs, 0, 1) * weights)
    return albedo * transfer


def relight_color_tape(albedo: ad.Tensor, visibility: ad.Tensor, coeffs: ad.Tensor) -> ad.Tensor:
    return albedo * (visibility @ ad.moveaxis(coeffs, 0, 1)) * (1.0 / math.pi)


def sh_loss(coeffs, sample_dirs) -> ad.Tensor:
    """Mean over samples and channels of ``min(0, radiance)**2``."""
    coeffs = ad.as_tensor(coeffs)
    if coeffs.ndim == 1:
        coeffs = coeffs.reshape(1, SH_COUNT)
    basis = ad.Tensor(sh_basis_batch(sample_dirs))
    rad = basis @ ad.moveaxis(coeffs, 0, 1)
    return ad.mean(ad.minimum(rad, 0.0) ** 2)


def sphere_samples(count: int = 1024, seed: int = 0) -> np.ndarray:
    if count < 512:
        raise ValueError("use at least 512 sphere samples")
    v = np.random.default_rng(seed).normal(size=(count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# -- normals and visibility ----------------------------------------------------


def normal_of(scales, rotations, means=None, camera_center=None) -> np.ndarray:
    """Rotated axis of the smallest scale (first index on ties), flipped to
    face ``camera_center`` when one is given."""
    from .renderer.projection import quat_to_rotmat

    scales = np.asarray(scales, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(rotations, dtype=np.float64).reshape(-1, 4)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    rot = quat_to_rotmat(q)
    axis = np.argmin(scales, axis=1)
    normals = rot[np.arange(len(q)), :, axis]
    if camera_center is not None and means is not None:
        to_cam = np.asarray(camera_center, dtype=np.float64) - np.asarray(means).reshape(-1, 3)
        flip = np.sum(normals * to_cam, axis=1) < 0
        normals = np.where(flip[:, None], -normals, normals)
    return normals


def normal_of_tape(scales: ad.Tensor, quats: ad.Tensor, means: ad.Tensor, camera_center) -> ad.Tensor:
    """Differentiable through the rotation; axis choice and sign are held fixed."""
    axis = np.argmin(scales.value, axis=1)
    qn = quats / ad.sqrt(ad.tsum(quats * quats, axis=1, keepdims=True))
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    cols = [
        ad.stack([1.0 - (y * y + z * z) * 2.0, (x * y + w * z) * 2.0, (x * z - w * y) * 2.0], 1),
        ad.stack([(x * y - w * z) * 2.0, 1.0 - (x * x + z * z) * 2.0, (y * z + w * x) * 2.0], 1),
        ad.stack([(x * z + w * y) * 2.0, (y * z - w * x) * 2.0, 1.0 - (x * x + y * y) * 2.0], 1),
    ]
    onehot = np.eye(3)[axis]
    normal = cols[0] * onehot[:, :1] + cols[1] * onehot[:, 1:2] + cols[2] * onehot[:, 2:3]
    to_cam = np.asarray(camera_center, dtype=np.float64) - means.value
    sign = np.where(np.sum(normal.value * to_cam, axis=1) < 0, -1.0, 1.0)[:, None]
    return normal * sign


def visibility_coeffs(normalized_positions, mlp: ad.Mlp) -> ad.Tensor:
    return mlp(ad.as_tensor(normalized_positions))


# -- structural features from training images --------------------------------


def to_gray(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return img @ REC601 if img.ndim == 3 else img


def area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix averaging ``n_in`` samples into ``n_out`` bins."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = edges[i], edges[i + 1]
        for j in range(int(math.floor(lo)), min(n_in, int(math.ceil(hi)))):
            mat[i, j] = min(hi, j + 1) - max(lo, j)
        mat[i] /= hi - lo
    return mat


@dataclass
class StructuralFeature:
    vector: np.ndarray
    image_id: str = ""


def structural_features(image, family: str = "coif1", levels: int = 2, image_id: str = "") -> StructuralFeature:
    """Final 2D approximation map of the grayscale image, area-resampled to
    16 x 16 and flattened."""
    gray = to_gray(image)
    if min(gray.shape) < 2**levels:
        raise ValueError(f"image {gray.shape} is smaller than 2**{levels} per side")
    approx = wavelet.dwt2d(gray, family, levels).approx
    rows = area_matrix(approx.shape[0], FEATURE_SIDE)
    cols = area_matrix(approx.shape[1], FEATURE_SIDE)
    return StructuralFeature((rows @ approx @ cols.T).ravel(), image_id)


def features_to_env(feature, mlp: ad.Mlp) -> ad.Tensor:
    """Map a 256-vector to ``(3, 9)`` environment coefficients on the tape."""
    vec = feature.vector if isinstance(feature, StructuralFeature) else feature
    return mlp(ad.as_tensor(np.asarray(vec).reshape(1, -1))).reshape(3, SH_COUNT)
