"""Image and regularization losses, all evaluated on the autodiff tape.

Images are ``(H, W, C)`` arrays or tensors.  Every function accepts either
and returns a scalar :class:`~wsplat.autodiff.Tensor`; call ``.item()`` for
a plain float.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from . import wavelet
from .relight import sh_loss

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PSNR_CAP = 99.0
BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

COMPONENTS = ("l1", "ssim", "vol", "sh", "lw")


@dataclass
class LossConfig:
    lambda_l1: float = 0.8
    lambda_ssim: float = 0.2
    lambda_vol: float = 0.01
    lambda_sh: float = 0.05
    lambda_lw: float = 0.1
    pyramid_levels: int = 3
    wavelet_levels: int = 2
    family: str = "coif1"

    def __post_init__(self):
        for name in ("lambda_l1", "lambda_ssim", "lambda_vol", "lambda_sh", "lambda_lw"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.pyramid_levels < 1 or self.wavelet_levels < 1:
            raise ValueError("pyramid_levels and wavelet_levels must be at least 1")
        wavelet.filter_bank(self.family)

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(a, b):
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _planes(x: ad.Tensor) -> ad.Tensor:
    return x if x.ndim == 3 else x.reshape(x.shape[0], x.shape[1], 1)


def l1_loss(a, b) -> ad.Tensor:
    a, b = _pair(a, b)
    return ad.mean(ad.tabs(a - b))


# -- SSIM ---------------------------------------------------------------------


@lru_cache(maxsize=32)
def gaussian_window_matrix(n: int, size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """``(n, n)`` matrix applying a normalized 1D Gaussian with zero padding,
    output aligned with the input."""
    half = size // 2
    taps = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    taps /= taps.sum()
    mat = np.zeros((n, n))
    for offset, w in zip(range(-half, half + 1), taps):
        mat += w * np.eye(n, k=offset)
    mat.setflags(write=False)
    return mat


def _filter(x: ad.Tensor) -> ad.Tensor:
    h, w = x.shape[0], x.shape[1]
    return ad.axis_matmul(ad.axis_matmul(x, gaussian_window_matrix(h), 0), gaussian_window_matrix(w), 1)


def ssim_map(a, b) -> ad.Tensor:
    a, b = _pair(a, b)
    a, b = _planes(a), _planes(b)
    mu_a, mu_b = _filter(a), _filter(b)
    mu_ab, mu_aa, mu_bb = mu_a * mu_b, mu_a * mu_a, mu_b * mu_b
    s_ab = _filter(a * b) - mu_ab
    s_aa = _filter(a * a) - mu_aa
    s_bb = _filter(b * b) - mu_bb
    num = (mu_ab * 2.0 + SSIM_C1) * (s_ab * 2.0 + SSIM_C2)
    den = (mu_aa + mu_bb + SSIM_C1) * (s_aa + s_bb + SSIM_C2)
    return num / den


def ssim(a, b) -> ad.Tensor:
    """Gaussian-windowed SSIM averaged over pixels and channels."""
    return ad.mean(ssim_map(a, b))


def psnr(a, b, cap: float = PSNR_CAP) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


# -- volume ---------------------------------------------------------------------


def volume_reg(scales) -> ad.Tensor:
    """Sum over Gaussians of the product of their three scales."""
    s = ad.as_tensor(getattr(scales, "scales", scales))
    if s.size == 0:
        return ad.Tensor(0.0)
    s = s.reshape(-1, 3)
    return ad.tsum(s[:, 0] * (s[:, 1] * s[:, 2]))


# -- Laplacian pyramid -----------------------------------------------------------


@lru_cache(maxsize=64)
def blur_matrix(n: int) -> np.ndarray:
    """5-tap binomial blur with mirror (reflect-without-edge) boundaries."""
    mat = np.zeros((n, n))
    for i in range(n):
        for off, w in zip(range(-2, 3), BINOMIAL5):
            j = i + off
            if n > 1:
                period = 2 * (n - 1)
                j %= period
                if j >= n:
                    j = period - j
            else:
                j = 0
            mat[i, j] += w
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=64)
def down_matrix(n: int) -> np.ndarray:
    mat = blur_matrix(n)[::2].copy()
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=64)
def up_matrix(n_out: int) -> np.ndarray:
    """Upsampling from ``ceil(n_out / 2)`` samples: zero insertion, then the
    same blur scaled by two."""
    n_in = (n_out + 1) // 2
    insert = np.zeros((n_out, n_in))
    insert[2 * np.arange(n_in), np.arange(n_in)] = 1.0
    mat = 2.0 * blur_matrix(n_out) @ insert
    mat.setflags(write=False)
    return mat


def _resample(x, rows: np.ndarray, cols: np.ndarray):
    if isinstance(x, ad.Tensor):
        return ad.axis_matmul(ad.axis_matmul(x, rows, 0), cols, 1)
    y = np.einsum("ij,j...->i...", rows, np.asarray(x, dtype=np.float64))
    return np.einsum("kl,il...->ik...", cols, y)


def laplacian_pyramid(image, levels: int) -> list:
    """``levels`` bands: ``levels - 1`` band-pass details, finest first, then
    the low-pass residual.  Works on arrays or tensors."""
    if levels < 1:
        raise ValueError("levels must be at least 1")
    h, w = np.shape(image.value if isinstance(image, ad.Tensor) else image)[:2]
    if min(h, w) < 2**levels:
        raise ValueError(f"image {h}x{w} is too small for a {levels}-level pyramid")
    bands = []
    current = image
    for _ in range(levels - 1):
        ch, cw = current.shape[0], current.shape[1]
        low = _resample(current, down_matrix(ch), down_matrix(cw))
        bands.append(current - _resample(low, up_matrix(ch), up_matrix(cw)))
        current = low
    bands.append(current)
    return bands


def reconstruct_pyramid(bands: list):
    image = bands[-1]
    for band in reversed(bands[:-1]):
        h, w = band.shape[0], band.shape[1]
        image = band + _resample(image, up_matrix(h), up_matrix(w))
    return image


# -- Laplacian-wavelet loss ------------------------------------------------------


def wavelet_bands(x: ad.Tensor, family: str, levels: int) -> list[ad.Tensor]:
    """Detail blocks of every level (finest first) then the approximation,
    each as one tensor holding the H, V and D quadrants."""
    out = []
    approx = x
    for _ in range(levels):
        h, w = approx.shape[0], approx.shape[1]
        if min(h, w) < 2:
            raise ValueError("image too small for the requested wavelet levels")
        full = ad.axis_matmul(ad.axis_matmul(approx, wavelet.analysis_operator(family, w), 1),
                              wavelet.analysis_operator(family, h), 0)
        mh, mw = full.shape[0] // 2, full.shape[1] // 2
        out.append(full[mh:, :mw])  # H: high along rows
        out.append(full[:mh, mw:])  # V: high along columns
        out.append(full[mh:, mw:])
        approx = full[:mh, :mw]
    out.append(approx)
    return out


def lw_loss(a, b, config: LossConfig | None = None) -> ad.Tensor:
    """Mean-reduced L1 over every Laplacian band plus every wavelet subband
    (all H/V/D per level and the final approximation), per channel."""
    config = config or LossConfig()
    a, b = _pair(a, b)
    diff = _planes(a - b)
    total = ad.Tensor(0.0)
    for band in laplacian_pyramid(diff, config.pyramid_levels):
        total = total + ad.mean(ad.tabs(band))
    for band in wavelet_bands(diff, config.family, config.wavelet_levels):
        total = total + ad.mean(ad.tabs(band))
    return total


# -- total objective ---------------------------------------------------------------


def total_loss(render, target, scales, env_coeffs, config: LossConfig, sample_dirs=None):
    """Weighted sum of all components.  Returns ``(total, parts)`` where
    ``parts`` maps component name to its unweighted tensor.  The SSIM entry
    holds ``1 - ssim``."""
    render, target = _pair(render, target)
    parts = {
        "l1": l1_loss(render, target),
        "ssim": 1.0 - ssim(render, target),
        "vol": volume_reg(scales),
    }
    if env_coeffs is None or sample_dirs is None:
        parts["sh"] = ad.Tensor(0.0)
    else:
        parts["sh"] = sh_loss(env_coeffs, sample_dirs)
    parts["lw"] = lw_loss(render, target, config) if config.lambda_lw > 0 else ad.Tensor(0.0)
    weights = {
        "l1": config.lambda_l1, "ssim": config.lambda_ssim, "vol": config.lambda_vol,
        "sh": config.lambda_sh, "lw": config.lambda_lw,
    }
    total = ad.Tensor(0.0)
    for name in COMPONENTS:
        total = total + parts[name] * weights[name]
    return total, parts


def write_loss_csv(rows, path) -> None:
    """Rows are dicts with ``step``, each component, and ``total``."""
    fields = ["step", *COMPONENTS, "total"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (row[k] if k == "step" else repr(float(row[k]))) for k in fields})
