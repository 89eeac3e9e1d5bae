"""Posed image sets, their manifest format, and the synthetic oracle scene."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imageio import load_image, save_png, save_raw
from .ply import load_ply, save_ply
from .pointfield import FrequencySplit, PointCloud
from .renderer import Camera, Gaussians, look_at, rasterize

POINT_JITTER = 0.01
RING_RADIUS = 2.6
RING_ELEVATION = math.radians(25.0)
FIELD_OF_VIEW = math.radians(36.0)


@dataclass
class View:
    id: str
    camera: Camera
    image: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        expected = (self.camera.height, self.camera.width, 3)
        if self.image.shape != expected:
            raise ValueError(f"view {self.id!r}: image shape {self.image.shape} does not match camera {expected}")


@dataclass
class SceneBundle:
    train: list[View]
    test: list[View]
    point_cloud: PointCloud
    split: FrequencySplit | None = None
    ground_truth: Gaussians | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.train:
            raise ValueError("a scene needs at least one training view")
        ids = [v.id for v in self.train + self.test]
        if len(set(ids)) != len(ids):
            raise ValueError("view ids must be unique")


def ring_cameras(n: int, resolution: int, phase: float = 0.0, radius: float = RING_RADIUS,
                 elevation: float = RING_ELEVATION) -> list[Camera]:
    """``n`` cameras evenly spaced in azimuth, all looking at the origin."""
    f = 0.5 * resolution / math.tan(0.5 * FIELD_OF_VIEW)
    c = 0.5 * (resolution - 1)
    cams = []
    for i in range(n):
        az = 2.0 * math.pi * (i + phase) / n
        eye = radius * np.array([
            math.cos(elevation) * math.cos(az),
            math.cos(elevation) * math.sin(az),
            math.sin(elevation),
        ])
        cams.append(Camera(f, f, c, c, resolution, resolution, look_at(eye, np.zeros(3))))
    return cams


def _random_rotations(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q * np.where(q[:, :1] < 0, -1.0, 1.0)


def synth_gaussians(rng: np.random.Generator, n: int) -> Gaussians:
    """Soft blobs clustered around a few centers, plus thin elongated
    strokes for fine structure, all inside ``[-0.5, 0.5]^3``."""
    n_fine = n * 3 // 10
    n_blob = n - n_fine
    n_clusters = max(1, min(4, n_blob))
    centers = rng.uniform(-0.25, 0.25, size=(n_clusters, 3))
    owner = rng.integers(0, n_clusters, size=n_blob)
    blob_means = centers[owner] + rng.normal(0.0, 0.1, size=(n_blob, 3))
    blob_scales = rng.uniform(0.03, 0.09, size=(n_blob, 3))

    stroke_means = rng.uniform(-0.35, 0.35, size=(n_fine, 3))
    stroke_scales = np.column_stack([
        rng.uniform(0.06, 0.12, n_fine), rng.uniform(0.006, 0.012, n_fine), rng.uniform(0.006, 0.012, n_fine),
    ])
    means = np.clip(np.concatenate([blob_means, stroke_means]), -0.45, 0.45)
    scales = np.concatenate([blob_scales, stroke_scales])
    rotations = _random_rotations(rng, n)
    opacities = rng.uniform(0.5, 0.95, size=n)
    colors = rng.uniform(0.1, 0.95, size=(n, 3))
    return Gaussians(means, scales, rotations, opacities, colors)


def synth_scene(seed: int = 1, n_gaussians: int = 100, n_train_views: int = 20,
                n_test_views: int = 5, resolution: int = 64,
                background=(0.0, 0.0, 0.0)) -> SceneBundle:
    """Random ground-truth Gaussians rendered from a camera ring; held-out
    views sit at azimuths between the training ones."""
    if resolution < 32:
        raise ValueError("resolution must be at least 32")
    rng = np.random.default_rng(seed)
    gt = synth_gaussians(rng, n_gaussians)
    train_cams = ring_cameras(n_train_views, resolution)
    test_cams = ring_cameras(n_test_views, resolution, phase=0.37) if n_test_views else []
    train = [View(f"train_{i:03d}", c, rasterize(gt, c, background).image) for i, c in enumerate(train_cams)]
    test = [View(f"test_{i:03d}", c, rasterize(gt, c, background).image) for i, c in enumerate(test_cams)]
    points = gt.means + rng.normal(0.0, POINT_JITTER, size=gt.means.shape)
    return SceneBundle(train, test, PointCloud(points, gt.colors), ground_truth=gt)


# -- manifest -------------------------------------------------------------------


def save_scene(scene: SceneBundle, out_dir, png: bool = True) -> Path:
    """Write raw float images (plus PNG previews), the cloud, and
    ``manifest.json``.  Returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for view in scene.train + scene.test:
        rel = f"images/{view.id}.raw"
        save_raw(out / rel, view.image)
        if png:
            save_png(out / "images" / f"{view.id}.png", view.image)
        entries.append({"id": view.id, "path": rel, "camera": view.camera.to_dict()})
    save_ply(scene.point_cloud, out / "points.ply")
    manifest = {
        "images": entries,
        "split": {"train": [v.id for v in scene.train], "test": [v.id for v in scene.test]},
        "ply_path": "points.ply",
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_scene(manifest_path) -> SceneBundle:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    for key in ("images", "split", "ply_path"):
        if key not in manifest:
            raise ValueError(f"{manifest_path}: manifest lacks key {key!r}")
    views = {}
    for entry in manifest["images"]:
        path = root / entry["path"]
        if not path.is_file():
            raise FileNotFoundError(f"image not found: {path}")
        views[entry["id"]] = View(entry["id"], Camera.from_dict(entry["camera"]), load_image(path))

    def pick(ids):
        missing = [i for i in ids if i not in views]
        if missing:
            raise ValueError(f"{manifest_path}: split names unknown image ids {missing}")
        return [views[i] for i in ids]

    ply = root / manifest["ply_path"]
    if not ply.is_file():
        raise FileNotFoundError(f"point cloud not found: {ply}")
    return SceneBundle(pick(manifest["split"]["train"]), pick(manifest["split"].get("test", [])), load_ply(ply))
