"""Pinhole projection, tile-based splatting and its analytic gradients."""

from .camera import Camera, look_at
from .projection import ZNEAR, Projection, project, project_backward, project_gaussians, quat_to_rotmat
from .raster import (
    ALPHA_MAX,
    T_MIN,
    TILE,
    GaussianGrads,
    Gaussians,
    RenderOutput,
    available_backends,
    brute_force_pixel,
    default_backend,
    rasterize,
    rasterize_backward,
)

__all__ = [
    "ALPHA_MAX", "T_MIN", "TILE", "ZNEAR",
    "Camera", "GaussianGrads", "Gaussians", "Projection", "RenderOutput",
    "available_backends", "brute_force_pixel", "default_backend", "look_at",
    "project", "project_backward", "project_gaussians", "quat_to_rotmat",
    "rasterize", "rasterize_backward",
]
