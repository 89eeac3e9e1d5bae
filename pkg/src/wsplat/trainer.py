"""Two-stage optimization of frequency-split anchor Gaussians.

Stage one (warm-up) shades high-frequency Gaussians with unshadowed transfer;
stage two switches to learned visibility.  Everything is driven by a single
seeded generator, so equal seeds give bit-identical checkpoints and metrics.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import anchors as an
from . import autodiff as ad
from . import losses, relight
from .container import read_container, write_container
from .pointfield import FrequencySplit, decompose
from .renderer import Camera, Gaussians, rasterize, rasterize_backward
from .scene import SceneBundle, View

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
VARIANTS = ("full", "no_3d_wavelet", "no_2d_wavelet", "no_lw_loss", "no_individual_strategy",
            "haar", "db8", "sym16", "coif1")
ENV_HIDDEN = 64
VIS_HIDDEN = 64


class TrainingDiverged(FloatingPointError):
    """Loss or gradients went non-finite; carries the iteration."""

    def __init__(self, message: str, iteration: int, parts: dict | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.parts = parts or {}


@dataclass
class TrainConfig:
    voxel_size: float = 0.001
    family: str = "coif1"
    k: int = an.K_DEFAULT
    iterations: int = 2000
    warmup_iterations: int | None = None
    densify_interval: int = 100
    densify_until: int | None = None
    lr_position: float = 1e-4
    lr_features: float = 2e-3
    lr_heads: float = 2e-3
    lr_env: float = 1e-3
    lr_visibility: float = 1e-3
    lr_final_ratio: float = 1.0
    adam_eps: float = 1e-15
    hf_quantile: float = 0.75
    eps_occ: float = 1e-6
    tau_grow: float = 2e-4
    tau_opacity: float = 5e-3
    pick_rate: float = 0.4
    mask_lo_q: float = 0.05
    mask_hi_q: float = 0.95
    max_anchors: int = 4096
    sh_samples: int = 512
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    use_3d_wavelet: bool = True
    use_2d_wavelet: bool = True
    individual_strategy: bool = True
    loss: losses.LossConfig = field(default_factory=losses.LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = losses.LossConfig(**self.loss)
        self.background = tuple(float(v) for v in self.background)
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.warmup_iterations is None:
            self.warmup_iterations = int(0.3 * self.iterations)
        if self.densify_until is None:
            self.densify_until = int(0.6 * self.iterations)
        if self.iterations > 0 and not 0 <= self.warmup_iterations < self.iterations:
            raise ValueError("warmup_iterations must be below iterations")
        for name in ("lr_position", "lr_features", "lr_heads", "lr_env", "lr_visibility", "voxel_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.k < 1 or self.densify_interval < 1:
            raise ValueError("k and densify_interval must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["background"] = list(self.background)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def for_variant(self, variant: str) -> "TrainConfig":
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
        if variant == "no_3d_wavelet":
            return replace(self, use_3d_wavelet=False)
        if variant == "no_2d_wavelet":
            return replace(self, use_2d_wavelet=False)
        if variant == "no_lw_loss":
            return replace(self, loss=replace(self.loss, lambda_lw=0.0))
        if variant == "no_individual_strategy":
            return replace(self, individual_strategy=False)
        if variant in ("haar", "db8", "sym16", "coif1"):
            return replace(self, family=variant, loss=replace(self.loss, family=variant))
        return replace(self)


def config_field_names() -> dict[str, set]:
    return {
        "train": {f.name for f in fields(TrainConfig)} - {"loss"},
        "loss": {f.name for f in fields(losses.LossConfig)},
    }


# -- model ---------------------------------------------------------------------


class Model:
    """All learnable state: anchor sets, branch heads, environment and
    visibility networks, plus the frozen frequency-split side data."""

    def __init__(self, config: TrainConfig, split: FrequencySplit, train_features: np.ndarray,
                 rng: np.random.Generator):
        self.config = config
        self.frame = an.VoxelFrame.of_grid(split.source)
        self.deviation = split.detail_energy.ravel().copy()
        occupied = split.source.values.ravel() > 0
        self.reference = self.deviation[occupied].copy()
        self.train_features = np.asarray(train_features, dtype=np.float64)
        self.step = 0
        self.anchors: dict[str, an.AnchorSet] = {}
        if config.use_3d_wavelet:
            seeds = {"low": split.low_seeds, "high": split.high_seeds}
        else:
            seeds = {"low": np.concatenate([split.low_seeds, split.high_seeds])}
        for branch, pts in seeds.items():
            self.anchors[branch] = an.AnchorSet.from_seeds(branch, self.frame, pts, rng)
        shared = an.BranchHeads("shared", config.k, rng) if not config.individual_strategy else None
        self.heads = {
            b: shared if shared is not None else an.BranchHeads(b, config.k, rng) for b in self.anchors
        }
        self.env_mlp = ad.Mlp([relight.FEATURE_SIZE, ENV_HIDDEN, 3 * relight.SH_COUNT], rng=rng, name="env")
        self.vis_mlp = ad.Mlp([3, VIS_HIDDEN, relight.SH_COUNT], rng=rng, name="visibility")
        self.sphere = relight.sphere_samples(max(512, config.sh_samples), seed=config.seed)

    @property
    def branches(self) -> list[str]:
        return list(self.anchors)

    def head_parameters(self) -> list[ad.Tensor]:
        seen, out = set(), []
        for h in self.heads.values():
            if id(h) not in seen:
                seen.add(id(h))
                out.extend(h.parameters())
        return out

    def env_coeffs(self, feature) -> ad.Tensor:
        return relight.features_to_env(feature, self.env_mlp)

    def eval_env(self) -> np.ndarray:
        """Mean of the per-training-image environments."""
        coeffs = [self.env_coeffs(f).value for f in self.train_features]
        return np.mean(coeffs, axis=0)

    def in_relight_stage(self, step: int | None = None) -> bool:
        step = self.step if step is None else step
        return step >= self.config.warmup_iterations and self.config.iterations > 0

    def anchor_count(self) -> dict[str, int]:
        return {b: len(a) for b, a in self.anchors.items()}


@dataclass
class Frame:
    """Everything one forward pass produced, kept for the backward side."""

    image: ad.Tensor
    positions: dict
    spawned: dict
    render: object
    offsets: dict
    stats: dict = field(default_factory=dict)


def _render_op(g: Gaussians, inputs: list[ad.Tensor], cam: Camera, background, stats: dict) -> ad.Tensor:
    out = rasterize(g, cam, background)

    def vjp(grad):
        grads = rasterize_backward(out, grad)
        stats["mean2d"] = grads.mean2d
        return grads.means, grads.scales, grads.rotations, grads.opacities, grads.colors

    stats["render"] = out
    return ad.custom(inputs, out.image, vjp)


def forward(model: Model, cam: Camera, env: ad.Tensor | None, relight_stage: bool) -> Frame:
    cfg = model.config
    positions, spawned, offsets, parts = {}, {}, {}, []
    start = 0
    for tag, branch in enumerate(model.branches):
        anchors = model.anchors[branch]
        pos = ad.Tensor(anchors.positions, True, f"{branch}.positions")
        positions[branch] = pos
        if len(anchors) == 0:
            continue
        if branch == "high":
            shade = None
            if env is not None and cfg.use_2d_wavelet:
                if relight_stage:
                    def shade(ng, env=env):
                        vis = relight.visibility_coeffs(model.frame.normalize(ng.means), model.vis_mlp)
                        ng.visibility = vis
                        return relight.relight_color_tape(ng.albedo, vis, env)
                else:
                    def shade(ng, env=env):
                        normals = relight.normal_of_tape(ng.scales, ng.rotations, ng.means, cam.center)
                        return relight.warmup_color_tape(ng.albedo, normals, env)
            ng = an.predict_high(anchors, model.heads[branch], cam.center, shade, pos)
        else:
            ng = an.predict_low(anchors, model.heads[branch], cam.center, pos)
        spawned[branch] = ng
        offsets[branch] = (start, start + len(ng), tag)
        start += len(ng)
        parts.append(ng)
    stats: dict = {}
    if not parts:
        image = ad.Tensor(np.broadcast_to(np.asarray(cfg.background), (cam.height, cam.width, 3)).copy())
        return Frame(image, positions, spawned, None, offsets, stats)
    cat = lambda attr: ad.concat([getattr(p, attr) for p in parts], axis=0)  # noqa: E731
    means, scales, rots, opac, colors = (cat(a) for a in ("means", "scales", "rotations", "opacities", "colors"))
    g = Gaussians(means.value, scales.value, rots.value, opac.value, colors.value)
    image = _render_op(g, [means, scales, rots, opac, colors], cam, cfg.background, stats)
    return Frame(image, positions, spawned, stats["render"], offsets, stats)


def _all_scales(frame: Frame) -> ad.Tensor | np.ndarray:
    if not frame.spawned:
        return np.zeros((0, 3))
    return ad.concat([ng.scales for ng in frame.spawned.values()], axis=0)


# -- training --------------------------------------------------------------------


@dataclass
class TrainResult:
    model: Model
    history: list[dict]
    checkpoint_path: Path | None = None


def prepare_split(scene: SceneBundle, config: TrainConfig) -> FrequencySplit:
    split = scene.split
    if (
        split is None
        or split.family != config.family
        or split.source.voxel_size != config.voxel_size
        or split.hf_quantile != config.hf_quantile
    ):
        split = decompose(scene.point_cloud, config.voxel_size, config.family, config.hf_quantile, config.eps_occ)
    return split


def image_features(views: list[View], family: str) -> np.ndarray:
    return np.stack([relight.structural_features(v.image, family, 2, v.id).vector for v in views])


def _lr(base: float, step: int, cfg: TrainConfig) -> float:
    if cfg.lr_final_ratio == 1.0 or cfg.iterations <= 1:
        return base
    return base * cfg.lr_final_ratio ** (step / (cfg.iterations - 1))


def init_model(scene: SceneBundle, config: TrainConfig) -> Model:
    rng = np.random.default_rng(config.seed)
    split = prepare_split(scene, config)
    return Model(config, split, image_features(scene.train, config.family), rng)


def train(scene: SceneBundle, config: TrainConfig, out_dir=None, log_every: int = 0,
          checkpoint_every: int = 0) -> TrainResult:
    """Run the full optimization.  With ``out_dir`` a checkpoint and the loss
    curve CSV are written there."""
    model = init_model(scene, config)
    rng = np.random.default_rng([config.seed, 1])
    adam = ad.Adam(eps=config.adam_eps)
    candidates = {b: an.CandidateGrid(model.frame) for b in model.branches}
    history: list[dict] = []
    out = Path(out_dir) if out_dir is not None else None

    for step in range(config.iterations):
        model.step = step
        view_id = int(rng.integers(len(scene.train)))
        view = scene.train[view_id]
        cam = view.camera
        env = model.env_coeffs(model.train_features[view_id])
        relight_stage = model.in_relight_stage(step)
        try:
            frame = forward(model, cam, env, relight_stage)
            total, parts = losses.total_loss(
                frame.image, view.image, _all_scales(frame), env, config.loss, model.sphere
            )
        except ad.NonFiniteError as exc:
            raise TrainingDiverged(f"non-finite forward pass at iteration {step}: {exc}", step) from exc
        row = {"step": step, **{k: v.item() for k, v in parts.items()}, "total": total.item()}
        if not all(math.isfinite(v) for k, v in row.items() if k != "step"):
            raise TrainingDiverged(f"non-finite loss at iteration {step}: {row}", step, row)

        features = [model.anchors[b].features for b in model.branches]
        positions = list(frame.positions.values())
        params = features + positions + model.head_parameters() + model.env_mlp.parameters() + model.vis_mlp.parameters()
        try:
            ad.backward(total, params)
        except ad.NonFiniteError as exc:
            raise TrainingDiverged(f"non-finite gradient at iteration {step}: {exc}", step, row) from exc
        history.append(row)
        if log_every and step % log_every == 0:
            log.info("step %d total %.5f anchors %s", step, row["total"], model.anchor_count())

        try:
            adam.step(features, _lr(config.lr_features, step, config))
            adam.step(model.head_parameters(), _lr(config.lr_heads, step, config))
            adam.step(model.env_mlp.parameters(), _lr(config.lr_env, step, config))
            if relight_stage:
                adam.step(model.vis_mlp.parameters(), _lr(config.lr_visibility, step, config))
        except ad.NonFiniteError as exc:
            raise TrainingDiverged(f"non-finite update at iteration {step}: {exc}", step, row) from exc

        _accumulate(model, frame, cam, candidates)
        if (step + 1) % config.densify_interval == 0 and step + 1 <= config.densify_until:
            _densify(model, frame, adam, candidates, rng)
        if out is not None and checkpoint_every and (step + 1) % checkpoint_every == 0:
            save_checkpoint(model, adam, out / "checkpoint.wspl")

    model.step = config.iterations
    ckpt = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "checkpoint.wspl"
        save_checkpoint(model, adam, ckpt)
        losses.write_loss_csv(history, out / "loss.csv")
    return TrainResult(model, history, ckpt)


def _accumulate(model: Model, frame: Frame, cam: Camera, candidates: dict) -> None:
    if frame.render is None or "mean2d" not in frame.stats:
        return
    d2 = frame.stats["mean2d"] * np.array([0.5 * cam.width, 0.5 * cam.height])
    norms = np.linalg.norm(d2, axis=1)
    proj = frame.render.projection
    visible = proj.valid & (proj.radius > 0)
    for branch, (lo, hi, _) in frame.offsets.items():
        anchors, ng = model.anchors[branch], frame.spawned[branch]
        k = model.config.k
        vis = visible[lo:hi]
        an.accumulate_stats(anchors, norms[lo:hi], ng.opacities.value, k, vis.reshape(-1, k).any(axis=1))
        candidates[branch].add(ng.means.value[vis], norms[lo:hi][vis])


def _densify(model: Model, frame: Frame, adam: ad.Adam, candidates: dict, rng) -> None:
    cfg = model.config
    for branch in model.branches:
        anchors = model.anchors[branch]
        name = anchors.features.name
        pos = frame.positions[branch]
        if len(anchors) and pos.grad is not None:
            rows = an.update_positions(anchors, pos.grad, cfg.lr_position)
            adam.reindex(name, rows)
        deviation = None
        if branch == "high" and cfg.individual_strategy:
            deviation = model.deviation
        n_old = len(anchors)
        added = an.grow(
            anchors, candidates[branch], cfg.tau_grow, cfg.pick_rate, rng, deviation,
            (cfg.mask_lo_q, cfg.mask_hi_q), model.reference, cfg.max_anchors,
        )
        adam.reindex(name, np.arange(n_old), added)
        kept = an.prune(anchors, cfg.tau_opacity)
        adam.reindex(name, kept)
        candidates[branch].reset()


# -- rendering and evaluation -------------------------------------------------------


def render(model: Model, cam: Camera, env_coeffs=None) -> np.ndarray:
    env = ad.Tensor(model.eval_env() if env_coeffs is None else np.asarray(env_coeffs))
    return forward(model, cam, env, model.in_relight_stage()).image.value


def evaluate(model: Model, views: list[View]) -> dict:
    """Per-view and mean PSNR/SSIM under the mean training environment."""
    env = model.eval_env()
    rows = []
    for view in views:
        if view.image.shape != (view.camera.height, view.camera.width, 3):
            raise ValueError(f"view {view.id!r}: image does not match camera")
        img = np.clip(render(model, view.camera, env), 0.0, 1.0)
        rows.append({
            "id": view.id,
            "psnr": losses.psnr(img, view.image),
            "ssim": losses.ssim(img, view.image).item(),
        })
    return summarize(rows)


def summarize(rows: list[dict]) -> dict:
    n = len(rows)
    return {
        "views": rows,
        "mean_psnr": float(sum(r["psnr"] for r in rows) / n) if n else float("nan"),
        "mean_ssim": float(sum(r["ssim"] for r in rows) / n) if n else float("nan"),
    }


def evaluate_images(pairs) -> dict:
    """Metrics for ``(id, rendered, reference)`` triples."""
    return summarize([
        {"id": i, "psnr": losses.psnr(a, b), "ssim": losses.ssim(a, b).item()} for i, a, b in pairs
    ])


def metrics_json(metrics: dict) -> str:
    return json.dumps(metrics, indent=2, sort_keys=True) + "\n"


def ablate(scene: SceneBundle, config: TrainConfig, variants, out_dir=None) -> list[dict]:
    """Train one model per variant on the same scene and seed."""
    variants = list(variants)
    cfgs = [(v, config.for_variant(v)) for v in variants]
    table = []
    for name, cfg in cfgs:
        sub = None if out_dir is None else Path(out_dir) / name
        result = train(scene, cfg, sub)
        m = evaluate(result.model, scene.test)
        table.append({"variant": name, "psnr": m["mean_psnr"], "ssim": m["mean_ssim"],
                      "anchors": sum(result.model.anchor_count().values())})
    return table


def ablation_inversions(table: list[dict], tolerance_db: float = 0.1) -> list[str]:
    full = next((r for r in table if r["variant"] == "full"), None)
    if full is None:
        return []
    return [r["variant"] for r in table if r["variant"] != "full" and full["psnr"] < r["psnr"] - tolerance_db]


def write_table_csv(table: list[dict], path) -> None:
    import csv

    keys = list(table[0]) if table else ["variant", "psnr", "ssim"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in table:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(model: Model, adam: ad.Adam | None, path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for branch, a in model.anchors.items():
        arrays[f"anchors.{branch}.index"] = a.index
        arrays[f"anchors.{branch}.features"] = a.features.value
        for stat in ("grad_accum", "grad_count", "opacity_accum", "opacity_count"):
            arrays[f"anchors.{branch}.{stat}"] = getattr(a, stat)
    for p in model.head_parameters() + model.env_mlp.parameters() + model.vis_mlp.parameters():
        arrays[f"param.{p.name}"] = p.value
    arrays["frame.deviation"] = model.deviation
    arrays["frame.reference"] = model.reference
    arrays["train_features"] = model.train_features
    envs = np.stack([model.env_coeffs(f).value for f in model.train_features])
    arrays["env.per_image"] = envs
    if adam is not None:
        for name, slot in adam.state.items():
            for key, value in slot.items():
                arrays[f"adam.{name}.{key}"] = value
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "step": model.step,
        "frame": {
            "origin": [float(v) for v in model.frame.origin],
            "voxel_size": model.frame.voxel_size,
            "dims": list(model.frame.dims),
        },
        "branches": model.branches,
    }
    write_container(path, arrays, meta)


def load_checkpoint(path) -> tuple[Model, ad.Adam]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    arrays, meta = read_container(path)
    cfg = TrainConfig.from_dict(meta["config"])
    model = Model.__new__(Model)
    model.config = cfg
    fr = meta["frame"]
    model.frame = an.VoxelFrame(fr["origin"], fr["voxel_size"], fr["dims"])
    model.deviation = arrays["frame.deviation"]
    model.reference = arrays["frame.reference"]
    model.train_features = arrays["train_features"]
    model.step = int(meta["step"])
    rng = np.random.default_rng(0)
    model.anchors = {}
    for branch in meta["branches"]:
        a = an.AnchorSet(branch, model.frame, arrays[f"anchors.{branch}.index"], arrays[f"anchors.{branch}.features"])
        for stat in ("grad_accum", "grad_count", "opacity_accum", "opacity_count"):
            setattr(a, stat, arrays[f"anchors.{branch}.{stat}"].copy())
        model.anchors[branch] = a
    shared = an.BranchHeads("shared", cfg.k, rng) if not cfg.individual_strategy else None
    model.heads = {b: shared if shared is not None else an.BranchHeads(b, cfg.k, rng) for b in model.anchors}
    model.env_mlp = ad.Mlp([relight.FEATURE_SIZE, ENV_HIDDEN, 3 * relight.SH_COUNT], rng=rng, name="env")
    model.vis_mlp = ad.Mlp([3, VIS_HIDDEN, relight.SH_COUNT], rng=rng, name="visibility")
    model.sphere = relight.sphere_samples(max(512, cfg.sh_samples), seed=cfg.seed)
    for p in model.head_parameters() + model.env_mlp.parameters() + model.vis_mlp.parameters():
        p.value = arrays[f"param.{p.name}"].copy()
    adam = ad.Adam(eps=cfg.adam_eps)
    for key, value in arrays.items():
        if key.startswith("adam."):
            name, slot = key[5:].rsplit(".", 1)
            adam.state.setdefault(name, {})[slot] = value.copy()
    return model, adam
