"""Point clouds, occupancy density grids and their wavelet frequency split."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import wavelet
from .ply import load_ply, save_ply

MAX_VOXELS = 2**27
EPS_OCC = 1e-6
HF_QUANTILE = 0.75
# detail energy at or below this is rounding noise (grid values lie in [0, 1])
ENERGY_FLOOR = 1e-20


@dataclass
class PointCloud:
    positions: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) == 0:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("point coordinates must be finite")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != len(self.positions):
                raise ValueError("colors and positions differ in length")

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class DensityGrid:
    """Regular voxel field.  Voxel ``(i, j, k)`` spans
    ``origin + voxel_size * [idx, idx + 1)``; its center is at ``idx + 0.5``."""

    origin: np.ndarray
    voxel_size: float
    values: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("grid values must be a 3D array")
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.values.shape)

    def centers(self, index) -> np.ndarray:
        index = np.asarray(index, dtype=np.float64).reshape(-1, 3)
        return self.origin + self.voxel_size * (index + 0.5)

    def index_of(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.floor((points - self.origin) / self.voxel_size).astype(np.int64)

    def contains(self, index) -> np.ndarray:
        index = np.asarray(index).reshape(-1, 3)
        return np.all((index >= 0) & (index < np.array(self.dims)), axis=1)

    def with_values(self, values) -> "DensityGrid":
        return DensityGrid(self.origin.copy(), self.voxel_size, values)


def voxelize(pc: PointCloud, voxel_size: float, max_voxels: int = MAX_VOXELS) -> DensityGrid:
    """Count points per voxel over the cloud's bounding box, normalized by the
    largest count.  Extents are padded up to even numbers."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    pos = pc.positions
    origin = pos.min(axis=0)
    span = pos.max(axis=0) - origin
    dims = np.floor(span / voxel_size).astype(np.int64) + 1
    dims += dims % 2
    total = int(np.prod(dims.astype(object)))
    if total > max_voxels:
        raise ValueError(
            f"voxel_size {voxel_size} yields {total} voxels, above the limit of {max_voxels}"
        )
    idx = np.floor((pos - origin) / voxel_size).astype(np.int64)
    idx = np.minimum(idx, dims - 1)
    flat = np.ravel_multi_index(idx.T, tuple(dims))
    counts = np.bincount(flat, minlength=total).astype(np.float64).reshape(tuple(dims))
    return DensityGrid(origin, float(voxel_size), counts / counts.max())


@dataclass
class FrequencySplit:
    low_seeds: np.ndarray
    high_seeds: np.ndarray
    low_grid: DensityGrid
    high_grid: DensityGrid
    source: DensityGrid
    detail_energy: np.ndarray
    family: str
    hf_quantile: float
    low_index: np.ndarray = field(repr=False, default=None)
    high_index: np.ndarray = field(repr=False, default=None)

    def additivity_residual(self) -> float:
        return float(np.abs(self.low_grid.values + self.high_grid.values - self.source.values).max())


def detail_energy(bands: wavelet.SubbandSet3D) -> np.ndarray:
    """Per-voxel sum over the seven detail bands of each band's squared
    single-band synthesis."""
    energy = np.zeros(bands.source_dims)
    for name in bands.detail_names():
        energy += wavelet.idwt3d(bands.masked([name])) ** 2
    return energy


def decompose(
    pc: PointCloud,
    voxel_size: float,
    family: str = "coif1",
    hf_quantile: float = HF_QUANTILE,
    eps_occ: float = EPS_OCC,
) -> FrequencySplit:
    if not 0.0 < hf_quantile < 1.0:
        raise ValueError("hf_quantile must lie in (0, 1)")
    grid = voxelize(pc, voxel_size)
    occupied = grid.values > 0
    if occupied.sum() < 2:
        raise ValueError("the cloud occupies a single voxel; nothing to decompose")
    low, high, bands = wavelet.split_low_high(grid.values, family)
    energy = detail_energy(bands)

    low_index = np.argwhere(low > eps_occ)
    threshold = max(float(np.quantile(energy[occupied], hf_quantile)), ENERGY_FLOOR)
    high_index = np.argwhere(occupied & (energy > threshold))
    return FrequencySplit(
        grid.centers(low_index),
        grid.centers(high_index),
        grid.with_values(low),
        grid.with_values(high),
        grid,
        energy,
        family,
        hf_quantile,
        low_index,
        high_index,
    )


def save_split(split: FrequencySplit, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_ply(split.low_seeds, out / "low_seeds.ply")
    save_ply(split.high_seeds, out / "high_seeds.ply")
    sidecar = {
        "voxel_size": split.source.voxel_size,
        "family": split.family,
        "hf_quantile": split.hf_quantile,
        "origin": [float(v) for v in split.source.origin],
        "dims": list(split.source.dims),
        "low_count": int(len(split.low_seeds)),
        "high_count": int(len(split.high_seeds)),
        "additivity_residual": split.additivity_residual(),
    }
    (out / "split.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return sidecar


__all__ = [
    "DensityGrid", "FrequencySplit", "PointCloud", "decompose", "detail_energy",
    "load_ply", "save_ply", "save_split", "voxelize",
]
