"""``wsplat`` command line: decompose, synth, train, render, eval, ablate.

Exit codes: 0 success, 1 pipeline error, 2 usage/config/missing input,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _toml():
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    return tomllib


def load_config_file(path) -> dict:
    """Parse a TOML config and reject unknown keys by their dotted path."""
    from .trainer import config_field_names

    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config not found: {path}")
    try:
        data = _toml().loads(path.read_text())
    except Exception as exc:
        raise UsageError(f"{path}: invalid TOML: {exc}") from exc
    known = config_field_names()
    for key, value in data.items():
        if key == "loss":
            if not isinstance(value, dict):
                raise UsageError(f"{path}: 'loss' must be a table")
            for sub in value:
                if sub not in known["loss"]:
                    raise UsageError(f"{path}: unknown config key 'loss.{sub}'")
        elif key not in known["train"]:
            raise UsageError(f"{path}: unknown config key '{key}'")
    return data


def build_config(args):
    from .trainer import TrainConfig

    data = load_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = {
        "iterations": getattr(args, "iterations", None),
        "voxel_size": getattr(args, "voxel_size", None),
        "family": getattr(args, "family", None),
        "eps_occ": getattr(args, "eps_occ", None),
        "seed": args.seed,
    }
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    if "family" in data:
        data.setdefault("loss", {}).setdefault("family", data["family"])
    try:
        return TrainConfig(**data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def _threads(args) -> int:
    raw = args.threads if args.threads is not None else os.environ.get("WSPLAT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"--threads/WSPLAT_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise UsageError("--threads must be at least 1")
    return n


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


# -- subcommands -------------------------------------------------------------


def cmd_decompose(args) -> int:
    from .pointfield import decompose, load_ply, save_split

    pc = load_ply(_require_file(args.ply, "point cloud"))
    split = decompose(pc, args.voxel_size, args.family, args.hf_quantile, args.eps_occ)
    side = save_split(split, args.out)
    print(f"low seeds: {side['low_count']}")
    print(f"high seeds: {side['high_count']}")
    print(f"additivity residual: {side['additivity_residual']:.3e}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .scene import save_scene, synth_scene

    scene = synth_scene(args.seed, args.n_gaussians, args.train_views, args.test_views, args.resolution)
    path = save_scene(scene, args.out)
    print(f"wrote {len(scene.train)} train / {len(scene.test)} test views to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .scene import load_scene
    from .trainer import train

    cfg = build_config(args)
    scene = load_scene(_require_file(args.scene, "manifest"))
    result = train(scene, cfg, args.out, log_every=args.log_every)
    counts = result.model.anchor_count()
    print(f"checkpoint: {result.checkpoint_path}")
    print("anchors: " + ", ".join(f"{b} {n}" for b, n in counts.items()))
    if result.history:
        print(f"final loss: {result.history[-1]['total']:.6f}")
    return EXIT_OK


def cmd_render(args) -> int:
    from .imageio import save_png, save_raw
    from .scene import load_scene
    from .trainer import load_checkpoint, render

    model, _ = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    scene = load_scene(_require_file(args.scene, "manifest"))
    views = {v.id: v for v in scene.train + scene.test}
    ids = args.views.split(",") if args.views else [v.id for v in scene.test]
    unknown = [i for i in ids if i not in views]
    if unknown:
        raise UsageError(f"unknown view ids: {', '.join(unknown)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in ids:
        img = render(model, views[i].camera)
        save_png(out / f"{i}.png", img)
        if args.raw:
            save_raw(out / f"{i}.raw", img)
        print(f"rendered {i}")
    return EXIT_OK


def _print_metrics(metrics: dict) -> None:
    print(f"{'view':<16}{'PSNR':>10}{'SSIM':>10}")
    for row in metrics["views"]:
        print(f"{row['id']:<16}{row['psnr']:>10.2f}{row['ssim']:>10.4f}")
    print(f"{'mean':<16}{metrics['mean_psnr']:>10.2f}{metrics['mean_ssim']:>10.4f}")


def cmd_eval(args) -> int:
    from .scene import load_scene
    from .trainer import evaluate, evaluate_images, load_checkpoint, metrics_json, write_table_csv

    scene = load_scene(_require_file(args.scene, "manifest"))
    views = scene.test if scene.test else scene.train
    if args.checkpoint:
        model, _ = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
        metrics = evaluate(model, views)
    elif args.ground_truth:
        metrics = evaluate_images((v.id, v.image, v.image) for v in views)
    else:
        raise UsageError("eval needs --checkpoint or --ground-truth")
    _print_metrics(metrics)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(metrics_json(metrics))
        write_table_csv(metrics["views"], out / "metrics.csv")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .scene import load_scene
    from .trainer import VARIANTS, ablate, ablation_inversions, write_table_csv

    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variants: {', '.join(unknown)} (choose from {', '.join(VARIANTS)})")
    cfg = build_config(args)
    scene = load_scene(_require_file(args.scene, "manifest"))
    table = ablate(scene, cfg, variants, args.out)
    print(f"{'variant':<26}{'PSNR':>10}{'SSIM':>10}")
    for row in table:
        print(f"{row['variant']:<26}{row['psnr']:>10.2f}{row['ssim']:>10.4f}")
    inverted = ablation_inversions(table)
    if inverted:
        print("inversions (variant beats full by more than 0.1 dB): " + ", ".join(inverted))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_table_csv(table, out / "ablation.csv")
        (out / "ablation.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", required=True, help="scene manifest.json")
    p.add_argument("--config", help="TOML file mirroring TrainConfig, with a [loss] table")
    p.add_argument("--iterations", type=int, help="override the iteration count")
    p.add_argument("--voxel-size", type=float, help="override the anchor voxel size")
    p.add_argument("--family", help="override the wavelet family")
    p.add_argument("--eps-occ", type=float, help="override the low-band occupancy threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wsplat", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--seed", type=int, default=None, help="seed for every random draw")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap (fallback: WSPLAT_THREADS; compute is single-threaded)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="split a point cloud into low/high anchor seeds")
    p.add_argument("--ply", required=True, help="input PLY")
    p.add_argument("--voxel-size", type=float, required=True, help="voxel edge length")
    p.add_argument("--family", default="coif1", help="wavelet family (haar, db8, sym16, coif1)")
    p.add_argument("--hf-quantile", type=float, default=0.75, help="detail-energy quantile for high seeds")
    p.add_argument("--eps-occ", type=float, default=1e-6, help="low-band occupancy threshold")
    p.add_argument("--out", required=True, help="output folder")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("synth", help="write the synthetic benchmark scene")
    p.add_argument("--out", required=True, help="output folder")
    p.add_argument("--n-gaussians", type=int, default=100, help="ground-truth Gaussian count")
    p.add_argument("--train-views", type=int, default=20, help="training view count")
    p.add_argument("--test-views", type=int, default=5, help="held-out view count")
    p.add_argument("--resolution", type=int, default=64, help="square image side in pixels")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="optimize a scene; writes checkpoint.wspl and loss.csv")
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="output folder")
    p.add_argument("--log-every", type=int, default=0, help="log every N steps (with -v)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render views of a checkpoint to PNG")
    p.add_argument("--checkpoint", required=True, help="checkpoint.wspl")
    p.add_argument("--scene", required=True, help="scene manifest.json")
    p.add_argument("--views", help="comma-separated view ids (default: held-out views)")
    p.add_argument("--raw", action="store_true", help="also write raw float images")
    p.add_argument("--out", required=True, help="output folder")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM on held-out views")
    p.add_argument("--scene", required=True, help="scene manifest.json")
    p.add_argument("--checkpoint", help="checkpoint.wspl to evaluate")
    p.add_argument("--ground-truth", action="store_true", help="score the reference images against themselves")
    p.add_argument("--out", help="folder for metrics.json and metrics.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train variants side by side")
    _add_train_flags(p)
    p.add_argument("--variants", default="full", help="comma-separated variant names")
    p.add_argument("--out", help="folder for ablation.csv/json and per-variant runs")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.seed is None:
        args.seed = 1 if args.command == "synth" else 0
    from .autodiff import NonFiniteError
    from .trainer import TrainingDiverged

    try:
        _threads(args)
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: numerical failure at iteration {exc.iteration}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NonFiniteError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
