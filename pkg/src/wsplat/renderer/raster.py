"""Tile-based front-to-back splatting with an analytic backward pass."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import _composite_py
from .camera import Camera
from .projection import ALPHA_MIN, Projection, project_backward, project_gaussians

try:
    from . import _composite as _composite_ext
except ImportError:  # extension not built
    _composite_ext = None

TILE = 16
ALPHA_MAX = 0.99
T_MIN = 1e-4


def available_backends() -> list[str]:
    return (["cython"] if _composite_ext is not None else []) + ["python"]


def default_backend() -> str:
    requested = os.environ.get("WSPLAT_BACKEND", "").strip().lower()
    if requested:
        if requested not in available_backends():
            raise RuntimeError(f"renderer backend {requested!r} is not available")
        return requested
    return available_backends()[0]


def _kernels(backend: str | None):
    backend = backend or default_backend()
    if backend == "cython":
        if _composite_ext is None:
            raise RuntimeError("the compiled renderer extension is not built")
        return _composite_ext
    if backend == "python":
        return _composite_py
    raise ValueError(f"unknown renderer backend {backend!r}")


@dataclass
class Gaussians:
    """Struct-of-arrays set of renderable Gaussians.

    ``scales`` hold positive extents; ``rotations`` are ``(w, x, y, z)``
    quaternions (normalized on projection).  ``branch`` tags provenance
    (0 = low, 1 = high) and survives :meth:`concat`.
    """

    means: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    albedo: np.ndarray | None = None
    sh_visibility: np.ndarray | None = None
    branch: np.ndarray | None = None

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        if self.branch is None:
            self.branch = np.zeros(n, dtype=np.int8)
        self.branch = np.asarray(self.branch, dtype=np.int8).reshape(n)

    def __len__(self) -> int:
        return len(self.means)

    @classmethod
    def empty(cls) -> "Gaussians":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)))

    def validate(self) -> None:
        qn = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(qn - 1.0) > 1e-6):
            raise ValueError("rotations must be unit quaternions")
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")
        if np.any((self.opacities <= 0) | (self.opacities >= 1)):
            raise ValueError("opacities must lie strictly inside (0, 1)")

    def subset(self, index) -> "Gaussians":
        def pick(a):
            return None if a is None else a[index]

        return Gaussians(
            self.means[index], self.scales[index], self.rotations[index],
            self.opacities[index], self.colors[index], pick(self.albedo),
            pick(self.sh_visibility), self.branch[index],
        )

    @staticmethod
    def concat(parts) -> "Gaussians":
        parts = list(parts)
        if not parts:
            return Gaussians.empty()

        def join(attr):
            vals = [getattr(p, attr) for p in parts]
            if any(v is None for v in vals):
                return None
            return np.concatenate(vals)

        return Gaussians(
            join("means"), join("scales"), join("rotations"), join("opacities"),
            join("colors"), join("albedo"), join("sh_visibility"), join("branch"),
        )


@dataclass
class RenderOutput:
    image: np.ndarray
    transmittance: np.ndarray
    ncontrib: np.ndarray | None
    skipped_singular: int = 0
    projection: Projection | None = None
    camera: Camera | None = None
    background: np.ndarray | None = None
    early_stop: bool = True
    backend: str = "python"
    # sorted (tile, depth) contributor lists
    pair_ids: np.ndarray | None = None
    tile_ranges: np.ndarray | None = None
    opacities: np.ndarray | None = None
    colors: np.ndarray | None = None
    n_gaussians: int = 0


def _bin(proj: Projection, width: int, height: int, tile: int):
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    idx = np.flatnonzero(proj.valid)
    u, v = proj.mean2d[idx, 0], proj.mean2d[idx, 1]
    r = proj.radius[idx]
    x0 = np.clip(np.floor((u - r) / tile), 0, ntx - 1).astype(np.int64)
    x1 = np.clip(np.floor((u + r) / tile), -1, ntx - 1).astype(np.int64)
    y0 = np.clip(np.floor((v - r) / tile), 0, nty - 1).astype(np.int64)
    y1 = np.clip(np.floor((v + r) / tile), -1, nty - 1).astype(np.int64)
    outside = (u + r < 0) | (v + r < 0) | (u - r > width - 1) | (v - r > height - 1)
    nx = np.where(outside, 0, np.maximum(x1 - x0 + 1, 0))
    ny = np.where(outside, 0, np.maximum(y1 - y0 + 1, 0))
    counts = nx * ny
    total = int(counts.sum())
    ranges = np.zeros((ntx * nty, 2), dtype=np.int64)
    if total == 0:
        return np.zeros(0, dtype=np.int64), ranges
    gid = np.repeat(idx, counts)
    owner = np.repeat(np.arange(len(idx)), counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(total) - starts[owner]
    tx = x0[owner] + local % nx[owner]
    ty = y0[owner] + local // nx[owner]
    tiles = ty * ntx + tx
    order = np.lexsort((gid, proj.depth[gid], tiles))
    tiles, gid = tiles[order], gid[order]
    bounds = np.searchsorted(tiles, np.arange(ntx * nty + 1))
    ranges[:, 0] = bounds[:-1]
    ranges[:, 1] = bounds[1:]
    return np.ascontiguousarray(gid, dtype=np.int64), ranges


def rasterize(
    gaussians: Gaussians,
    cam: Camera,
    background=(0.0, 0.0, 0.0),
    early_stop: bool = True,
    backend: str | None = None,
) -> RenderOutput:
    """Render ``gaussians`` from ``cam`` by depth-sorted alpha compositing."""
    backend = backend or default_backend()
    kernels = _kernels(backend)
    bg = np.ascontiguousarray(background, dtype=np.float64).reshape(3)
    proj = project_gaussians(
        gaussians.means, gaussians.scales, gaussians.rotations, gaussians.opacities, cam
    )
    ids, ranges = _bin(proj, cam.width, cam.height, TILE)
    opac = np.ascontiguousarray(gaussians.opacities)
    color = np.ascontiguousarray(gaussians.colors)
    image, trans, ncon = kernels.forward(
        cam.width, cam.height, TILE, ids, ranges,
        np.ascontiguousarray(proj.mean2d), np.ascontiguousarray(proj.conic),
        opac, color, bg, early_stop, ALPHA_MIN, ALPHA_MAX, T_MIN,
    )
    return RenderOutput(
        image, trans, ncon, proj.singular, proj, cam, bg, early_stop, backend,
        ids, ranges, opac, color, len(gaussians),
    )


@dataclass
class GaussianGrads:
    means: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    mean2d: np.ndarray = field(repr=False, default=None)


def rasterize_backward(output: RenderOutput, d_image) -> GaussianGrads:
    """Gradients of ``sum(d_image * output.image)`` with respect to every
    Gaussian parameter."""
    if output.pair_ids is None or output.projection is None:
        raise ValueError("render output carries no contributor lists; re-render with rasterize()")
    kernels = _kernels(output.backend)
    cam, proj = output.camera, output.projection
    d_image = np.ascontiguousarray(d_image, dtype=np.float64).reshape(cam.height, cam.width, 3)
    pair = kernels.backward(
        cam.width, cam.height, TILE, output.pair_ids, output.tile_ranges,
        np.ascontiguousarray(proj.mean2d), np.ascontiguousarray(proj.conic),
        output.opacities, output.colors, output.background, output.early_stop,
        ALPHA_MIN, ALPHA_MAX, T_MIN, output.transmittance, output.ncontrib, d_image,
    )
    n = output.n_gaussians
    per = np.zeros((n, 9))
    np.add.at(per, output.pair_ids, pair)
    d_means, d_scales, d_rot = project_backward(proj, cam, per[:, 0:2], per[:, 2:5])
    return GaussianGrads(d_means, d_scales, d_rot, per[:, 5].copy(), per[:, 6:9].copy(), per[:, 0:2].copy())


def brute_force_pixel(gaussians: Gaussians, cam: Camera, pixel, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Composite one pixel over every Gaussian in front of the camera, with no
    tiling, culling radius, or early termination."""
    px, py = float(pixel[0]), float(pixel[1])
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    if len(gaussians) == 0:
        return bg.copy()
    proj = project_gaussians(
        gaussians.means, gaussians.scales, gaussians.rotations, gaussians.opacities, cam
    )
    front = np.flatnonzero(proj.valid)
    order = front[np.lexsort((front, proj.depth[front]))]
    color = np.zeros(3)
    trans = 1.0
    for i in order:
        d = np.array([px, py]) - proj.mean2d[i]
        a, b, c = proj.conic[i]
        q = a * d[0] * d[0] + 2 * b * d[0] * d[1] + c * d[1] * d[1]
        alpha = min(ALPHA_MAX, gaussians.opacities[i] * np.exp(-0.5 * q))
        if alpha < ALPHA_MIN:
            continue
        color += gaussians.colors[i] * alpha * trans
        trans *= 1.0 - alpha
    return color + trans * bg
