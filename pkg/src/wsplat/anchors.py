"""Voxel anchors, their neural-Gaussian heads, and grow/prune bookkeeping.

Each anchor sits on a voxel center of the source density grid and carries a
32-wide feature.  Four MLP heads map ``[feature, view direction, normalized
position]`` to the parameters of ``k`` Gaussians spawned around it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .renderer import Gaussians

FEATURE_DIM = 32
HIDDEN = 64
K_DEFAULT = 10
HEAD_INPUT = FEATURE_DIM + 6
OPACITY_BIAS = -2.0
BRANCHES = ("low", "high")
IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass
class VoxelFrame:
    """Maps integer voxel indices to world centers and normalized coordinates."""

    origin: np.ndarray
    voxel_size: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.dims = tuple(int(d) for d in self.dims)

    @classmethod
    def of_grid(cls, grid) -> "VoxelFrame":
        return cls(grid.origin, grid.voxel_size, grid.dims)

    def centers(self, index) -> np.ndarray:
        return self.origin + self.voxel_size * (np.asarray(index, dtype=np.float64) + 0.5)

    def nearest_index(self, points) -> np.ndarray:
        return np.rint(
            (np.asarray(points, dtype=np.float64) - self.origin) / self.voxel_size - 0.5
        ).astype(np.int64)

    def cell_of(self, points) -> np.ndarray:
        return np.floor((np.asarray(points, dtype=np.float64) - self.origin) / self.voxel_size).astype(np.int64)

    def inside(self, index) -> np.ndarray:
        index = np.asarray(index).reshape(-1, 3)
        return np.all((index >= 0) & (index < np.array(self.dims)), axis=1)

    def flat(self, index) -> np.ndarray:
        return np.ravel_multi_index(np.asarray(index).reshape(-1, 3).T, self.dims)

    @property
    def center(self) -> np.ndarray:
        return self.origin + 0.5 * self.voxel_size * np.array(self.dims, dtype=np.float64)

    @property
    def half_extent(self) -> float:
        return 0.5 * self.voxel_size * float(max(self.dims))

    def normalize(self, points):
        """World points to roughly ``[-1, 1]`` over the grid."""
        return (points - self.center) * (1.0 / self.half_extent)


@dataclass
class AnchorSet:
    branch: str
    frame: VoxelFrame
    index: np.ndarray
    features: ad.Tensor
    grad_accum: np.ndarray = None
    grad_count: np.ndarray = None
    opacity_accum: np.ndarray = None
    opacity_count: np.ndarray = None

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ValueError(f"unknown branch {self.branch!r}")
        self.index = np.asarray(self.index, dtype=np.int64).reshape(-1, 3)
        n = len(self.index)
        if not isinstance(self.features, ad.Tensor):
            self.features = ad.Tensor(np.asarray(self.features, dtype=np.float64), True)
        self.features.requires_grad = True
        self.features.name = f"{self.branch}.features"
        if self.features.shape != (n, FEATURE_DIM):
            raise ValueError(f"features must be ({n}, {FEATURE_DIM}), got {self.features.shape}")
        for name in ("grad_accum", "grad_count", "opacity_accum", "opacity_count"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n))

    def __len__(self) -> int:
        return len(self.index)

    @property
    def positions(self) -> np.ndarray:
        return self.frame.centers(self.index)

    @classmethod
    def from_seeds(cls, branch: str, frame: VoxelFrame, seeds, rng: np.random.Generator,
                   init_scale: float = 0.01) -> "AnchorSet":
        index = np.unique(frame.nearest_index(np.asarray(seeds).reshape(-1, 3)), axis=0)
        feats = rng.normal(0.0, init_scale, size=(len(index), FEATURE_DIM))
        return cls(branch, frame, index, feats)

    def reset_stats(self) -> None:
        for name in ("grad_accum", "grad_count", "opacity_accum", "opacity_count"):
            setattr(self, name, np.zeros(len(self)))

    def take(self, keep: np.ndarray) -> None:
        keep = np.asarray(keep)
        self.index = self.index[keep]
        self.features = ad.Tensor(self.features.value[keep], True, self.features.name)
        for name in ("grad_accum", "grad_count", "opacity_accum", "opacity_count"):
            setattr(self, name, getattr(self, name)[keep])

    def append(self, index: np.ndarray, features: np.ndarray) -> None:
        index = np.asarray(index, dtype=np.int64).reshape(-1, 3)
        self.index = np.concatenate([self.index, index])
        self.features = ad.Tensor(np.concatenate([self.features.value, features]), True, self.features.name)
        for name in ("grad_accum", "grad_count", "opacity_accum", "opacity_count"):
            setattr(self, name, np.concatenate([getattr(self, name), np.zeros(len(index))]))


class BranchHeads:
    """``F_mu -> 3k``, ``F_sigma -> 7k`` (3k scales, 4k quaternions),
    ``F_alpha -> k`` and ``F_color -> 3k`` for one branch."""

    def __init__(self, name: str, k: int = K_DEFAULT, rng: np.random.Generator | None = None,
                 hidden: int = HIDDEN):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name, self.k = name, k
        widths = lambda out: [HEAD_INPUT, hidden, hidden, out]  # noqa: E731
        self.f_mu = ad.Mlp(widths(3 * k), rng=rng, name=f"{name}.mu")
        self.f_sigma = ad.Mlp(widths(7 * k), rng=rng, name=f"{name}.sigma")
        self.f_alpha = ad.Mlp(widths(k), rng=rng, output_bias=OPACITY_BIAS, name=f"{name}.alpha")
        self.f_color = ad.Mlp(widths(3 * k), rng=rng, name=f"{name}.color")

    @property
    def mlps(self) -> list[ad.Mlp]:
        return [self.f_mu, self.f_sigma, self.f_alpha, self.f_color]

    def parameters(self) -> list[ad.Tensor]:
        return [p for m in self.mlps for p in m.parameters()]

    def zero_(self) -> None:
        """Zero every weight, keep biases (a convenience for tests)."""
        for m in self.mlps:
            for w in m.weights:
                w.value = np.zeros_like(w.value)


@dataclass
class NeuralGaussians:
    """Tape tensors for the ``N * k`` Gaussians spawned by an anchor set.
    Row ``a * k + j`` is Gaussian ``j`` of anchor ``a``."""

    means: ad.Tensor
    scales: ad.Tensor
    rotations: ad.Tensor
    opacities: ad.Tensor
    color_logits: ad.Tensor
    colors: ad.Tensor = None
    albedo: ad.Tensor = None
    visibility: ad.Tensor = None
    anchor_of: np.ndarray = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.means.shape[0]

    def to_gaussians(self, branch_tag: int) -> Gaussians:
        q = self.rotations.value
        return Gaussians(
            self.means.value, self.scales.value, q / np.linalg.norm(q, axis=1, keepdims=True),
            self.opacities.value, self.colors.value,
            None if self.albedo is None else self.albedo.value,
            None if self.visibility is None else self.visibility.value,
            np.full(len(self), branch_tag, dtype=np.int8),
        )


def head_inputs(anchors: AnchorSet, positions: ad.Tensor, camera_center) -> ad.Tensor:
    """``[feature, unit view direction, normalized position]`` per anchor."""
    view = positions - ad.Tensor(np.asarray(camera_center, dtype=np.float64).reshape(1, 3))
    view = view / ad.sqrt(ad.tsum(view * view, axis=1, keepdims=True))
    return ad.concat([anchors.features, view, anchors.frame.normalize(positions)], axis=1)


def _spawn(anchors: AnchorSet, heads: BranchHeads, camera_center, positions: ad.Tensor | None):
    if positions is None:
        positions = ad.Tensor(anchors.positions)
    k, n = heads.k, len(anchors)
    bad = ~np.all(np.isfinite(anchors.features.value), axis=1) | ~np.all(np.isfinite(positions.value), axis=1)
    if bad.any():
        raise ad.NonFiniteError(f"non-finite input at {anchors.branch} anchor {int(np.argmax(bad))}")
    x = head_inputs(anchors, positions, camera_center)
    offsets = heads.f_mu(x).reshape(n, k, 3)
    means = (ad.tanh(offsets) * anchors.frame.voxel_size + positions.reshape(n, 1, 3)).reshape(n * k, 3)
    sigma = heads.f_sigma(x)
    scales = (ad.softplus(sigma[:, : 3 * k]) * anchors.frame.voxel_size).reshape(n * k, 3)
    rotations = sigma[:, 3 * k :].reshape(n * k, 4) + ad.Tensor(IDENTITY_QUAT)
    opacities = ad.sigmoid(heads.f_alpha(x)).reshape(n * k)
    logits = heads.f_color(x).reshape(n * k, 3)
    return NeuralGaussians(means, scales, rotations, opacities, logits,
                           anchor_of=np.repeat(np.arange(n), k))


def _check_finite(ng: NeuralGaussians, anchors: AnchorSet) -> None:
    for name in ("means", "scales", "rotations", "opacities", "color_logits"):
        bad = ~np.all(np.isfinite(getattr(ng, name).value.reshape(len(ng), -1)), axis=1)
        if bad.any():
            anchor = int(ng.anchor_of[np.argmax(bad)])
            raise ad.NonFiniteError(f"non-finite {name} from {anchors.branch} anchor {anchor}")


def predict_low(anchors: AnchorSet, heads: BranchHeads, camera_center,
                positions: ad.Tensor | None = None) -> NeuralGaussians:
    """``k`` Gaussians per anchor with color ``sigmoid(F_c)``."""
    ng = _spawn(anchors, heads, camera_center, positions)
    _check_finite(ng, anchors)
    ng.colors = ad.sigmoid(ng.color_logits)
    return ng


def predict_high(anchors: AnchorSet, heads: BranchHeads, camera_center, relight=None,
                 positions: ad.Tensor | None = None) -> NeuralGaussians:
    """As :func:`predict_low` but color is ``sigmoid(F_c + relight)``.

    ``relight`` is either an array/tensor of per-Gaussian logit offsets or a
    callable receiving the spawned :class:`NeuralGaussians` (so shading can
    depend on the predicted albedo and normals) and returning one.
    """
    ng = _spawn(anchors, heads, camera_center, positions)
    _check_finite(ng, anchors)
    ng.albedo = ad.sigmoid(ng.color_logits)
    if callable(relight):
        relight = relight(ng)
    if relight is None:
        ng.colors = ng.albedo
    else:
        ng.colors = ad.sigmoid(ng.color_logits + ad.as_tensor(relight))
    return ng


def fuse(low: Gaussians, high: Gaussians) -> Gaussians:
    """Disjoint union; provenance tags ride along in ``branch``."""
    return Gaussians.concat([g for g in (low, high) if len(g)]) if len(low) + len(high) else Gaussians.empty()


# -- statistics, growth and pruning --------------------------------------------


def accumulate_stats(anchors: AnchorSet, grad_norms, opacities, k: int, visible=None) -> None:
    """Add each anchor's mean per-Gaussian gradient norm and mean opacity."""
    n = len(anchors)
    g = np.asarray(grad_norms, dtype=np.float64).reshape(n, k)
    o = np.asarray(opacities, dtype=np.float64).reshape(n, k)
    seen = np.ones(n, dtype=bool) if visible is None else np.asarray(visible, dtype=bool).reshape(n)
    anchors.grad_accum += np.where(seen, g.mean(axis=1), 0.0)
    anchors.opacity_accum += np.where(seen, o.mean(axis=1), 0.0)
    anchors.grad_count += seen
    anchors.opacity_count += seen


@dataclass
class CandidateGrid:
    """Dense per-voxel gradient accumulator used to nominate growth sites."""

    frame: VoxelFrame
    total: np.ndarray = None
    count: np.ndarray = None

    def __post_init__(self):
        size = int(np.prod(self.frame.dims))
        if self.total is None:
            self.total = np.zeros(size)
            self.count = np.zeros(size)

    def add(self, points, grad_norms) -> None:
        cells = self.frame.cell_of(np.asarray(points).reshape(-1, 3))
        ok = self.frame.inside(cells)
        flat = self.frame.flat(cells[ok])
        np.add.at(self.total, flat, np.asarray(grad_norms).reshape(-1)[ok])
        np.add.at(self.count, flat, 1.0)

    def average(self) -> np.ndarray:
        return np.divide(self.total, self.count, out=np.zeros_like(self.total), where=self.count > 0)

    def reset(self) -> None:
        self.total[:] = 0.0
        self.count[:] = 0.0


def hf_mask(deviations, lo_q: float = 0.05, hi_q: float = 0.95, reference=None) -> np.ndarray:
    """Boolean admit-mask: deviations inside ``[quantile(lo_q), quantile(hi_q)]``.

    Quantiles come from ``reference`` when given (for instance the detail
    energies of all occupied voxels), else from ``deviations`` themselves.
    """
    if not 0.0 <= lo_q < hi_q <= 1.0:
        raise ValueError("need 0 <= lo_q < hi_q <= 1")
    dev = np.asarray(deviations, dtype=np.float64).reshape(-1)
    ref = dev if reference is None else np.asarray(reference, dtype=np.float64).reshape(-1)
    if len(dev) == 0 or len(ref) == 0:
        return np.ones(len(dev), dtype=bool)
    lo, hi = np.quantile(ref, lo_q), np.quantile(ref, hi_q)
    return (dev >= lo) & (dev <= hi)


def grow(anchors: AnchorSet, candidates: CandidateGrid, tau_grow: float, pick_rate: float,
         rng: np.random.Generator, deviation=None, mask_quantiles=(0.05, 0.95),
         reference=None, max_anchors: int | None = None, init_scale: float = 0.01) -> int:
    """Add anchors on empty voxels whose averaged gradient exceeds ``tau_grow``.

    ``deviation`` (flat per-voxel array) enables the high-frequency mask.
    Returns the number of anchors added.
    """
    if not 0.0 < pick_rate <= 1.0:
        raise ValueError("pick_rate must lie in (0, 1]")
    avg = candidates.average()
    eligible = avg > tau_grow
    if len(anchors):
        eligible[candidates.frame.flat(anchors.index)] = False
    flat = np.flatnonzero(eligible)
    if deviation is not None and len(flat):
        flat = flat[hf_mask(np.asarray(deviation).reshape(-1)[flat], *mask_quantiles, reference=reference)]
    if len(flat):
        flat = flat[rng.random(len(flat)) < pick_rate]
    if max_anchors is not None:
        room = max(0, max_anchors - len(anchors))
        if len(flat) > room:
            order = np.argsort(-avg[flat], kind="stable")
            flat = np.sort(flat[order[:room]])
    if len(flat) == 0:
        return 0
    index = np.stack(np.unravel_index(flat, candidates.frame.dims), axis=1)
    anchors.append(index, rng.normal(0.0, init_scale, size=(len(flat), FEATURE_DIM)))
    return len(flat)


def prune(anchors: AnchorSet, tau_opacity: float) -> np.ndarray:
    """Drop anchors whose mean accumulated opacity is below ``tau_opacity``
    (anchors never observed are kept).  At least one anchor survives.
    Accumulators of survivors are reset.  Returns the kept row indices."""
    n = len(anchors)
    mean_op = np.divide(anchors.opacity_accum, anchors.opacity_count,
                        out=np.full(n, np.inf), where=anchors.opacity_count > 0)
    keep = mean_op >= tau_opacity
    if n and not keep.any():
        keep[np.argmax(np.where(np.isfinite(mean_op), mean_op, -1.0))] = True
    rows = np.flatnonzero(keep)
    anchors.take(rows)
    anchors.reset_stats()
    return rows


def update_positions(anchors: AnchorSet, grads, lr: float) -> np.ndarray:
    """Descent step on anchor positions, re-quantized to the nearest voxel
    center.  Anchors landing on one voxel merge (features averaged).
    Returns, per new anchor, the first old row that maps to it."""
    grads = np.asarray(grads, dtype=np.float64).reshape(-1, 3)
    moved = anchors.positions - lr * grads
    index = anchors.frame.nearest_index(moved)
    uniq, first, inverse = np.unique(index, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    if len(uniq) == len(index) and np.array_equal(uniq[inverse], index):
        anchors.index = index
        return np.arange(len(index))
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    group = rank[inverse]
    m = len(uniq)
    counts = np.bincount(group, minlength=m).astype(np.float64)
    feats = np.zeros((m, FEATURE_DIM))
    np.add.at(feats, group, anchors.features.value)
    feats /= counts[:, None]
    stats = {}
    for name in ("grad_accum", "grad_count", "opacity_accum", "opacity_count"):
        stats[name] = np.bincount(group, weights=getattr(anchors, name), minlength=m)
    anchors.index = uniq[order]
    anchors.features = ad.Tensor(feats, True, anchors.features.name)
    for name, value in stats.items():
        setattr(anchors, name, value)
    return first[order]
