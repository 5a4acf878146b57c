from .ablation import ABLATIONS, AblationSettings, run_ablation
from .checkpoint import CHECKPOINT_FILE, load_checkpoint
from .config import RunConfig, apply_overrides, load_config
from .dataset import load_dataset
from .errors import ConfigError, CovsplatError
from .geometry import SE3Pose
from .image_io import write_rgb
from .log_config import setup_logging
from .pipeline import CONFIG_FILE, evaluate, run, write_run
from .results import METRICS_FILE, TRAJECTORY_FILE, read_trajectory, write_metrics
from .splat.rasterizer import rasterize
from .synthetic import SceneSpec, generate_scene, save_scene
import argparse
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np

logger = logging.getLogger(__name__)


def _parse_sets(items: Optional[List[str]]) -> list:
    pairs = []
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs.append((key.strip(), value.strip(), None))
    return pairs


def _print_summary(summary: dict) -> None:
    print(f"{'frames':12}{summary['frames']:>12}")
    for key in ("psnr", "ssim", "depth_l1", "ate_rmse"):
        print(f"{key:12}{summary[key]:>12.4f}")


def _cmd_run(args: argparse.Namespace) -> None:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = _parse_sets(args.set)
    if args.dataset:
        overrides.append(("dataset", args.dataset, None))
    if args.format:
        overrides.append(("dataset_format", args.format, None))
    if args.mode:
        overrides.append(("mode", args.mode, None))
    if args.seed is not None:
        overrides.append(("rng_seed", str(args.seed), None))
    config = apply_overrides(config, overrides)
    if not config.dataset:
        raise ConfigError("no dataset given (use --dataset or set 'dataset' in the config)")
    result = run(config)
    out = write_run(args.out, result, config)
    print(f"Trajectory: {(out / TRAJECTORY_FILE).resolve()}")
    print(f"Metrics: {(out / METRICS_FILE).resolve()}")
    _print_summary(result.report.summary())


def _cmd_eval(args: argparse.Namespace) -> None:
    run_dir = Path(args.run)
    config = load_config(run_dir / CONFIG_FILE)
    ckpt = load_checkpoint(run_dir / CHECKPOINT_FILE)
    dataset = load_dataset(config.dataset, config.dataset_format).clipped(
        config.clip_start_frames, config.clip_max_frames)
    _, trajectory = read_trajectory(run_dir / TRAJECTORY_FILE)
    report = evaluate(ckpt.gaussians, trajectory, dataset, ckpt.keyframe_frames.values(),
                      config.eval_stride_frames, config.trajectory_alignment, config.mapping.raster_workers)
    write_metrics(run_dir / METRICS_FILE, report, {"keyframes": len(ckpt.keyframe_frames)})
    _print_summary(report.summary())


def _parse_pose(text: str, keyframes: dict) -> SE3Pose:
    """Keyframe id, 7 numbers ``tx ty tz qx qy qz qw`` or 16 numbers of a row-major 4x4 matrix."""
    token = text.strip()
    if token.lstrip("-").isdigit():
        kf = int(token)
        if kf not in keyframes:
            raise ConfigError(f"checkpoint has no keyframe {kf}")
        return keyframes[kf]
    try:
        values = [float(v) for v in token.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"cannot parse pose {text!r}") from None
    if len(values) == 7:
        tx, ty, tz, qx, qy, qz, qw = values
        return SE3Pose(np.array([qw, qx, qy, qz]), [tx, ty, tz])
    if len(values) == 16:
        return SE3Pose.from_matrix(np.array(values).reshape(4, 4))
    raise ConfigError(f"pose needs a keyframe id, 7 or 16 numbers; got {len(values)}")


def _cmd_render(args: argparse.Namespace) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    pose = _parse_pose(args.pose, ckpt.keyframe_poses)
    frame = rasterize(ckpt.gaussians, pose.inverse(), ckpt.camera)
    write_rgb(args.out, frame.color)
    logger.info("rendered %d Gaussians to %s", len(ckpt.gaussians), args.out)
    print(f"Rendered: {Path(args.out).resolve()}")


def _cmd_ablate(args: argparse.Namespace) -> None:
    dataset = load_dataset(args.dataset, "synthetic") if args.dataset else None
    settings = AblationSettings(repeats=args.repeats, seed=args.seed,
                                post_process_iterations=args.post_process)
    per_seed, summary = run_ablation(args.name, dataset, settings)
    print(summary.to_string(index=False))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        per_seed.to_csv(out / f"ablation_{args.name}_runs.csv", index=False)
        summary.to_csv(out / f"ablation_{args.name}.csv", index=False)
        print(f"Results: {out.resolve()}")


def _cmd_generate(args: argparse.Namespace) -> None:
    spec = SceneSpec(kind=args.kind, trajectory=args.trajectory, frames=args.frames)
    scene = generate_scene(spec, seed=args.seed)
    manifest = save_scene(scene, args.out)
    print(f"Scene: {manifest.resolve()}")


def main(argv: Optional[list] = None) -> int:
    parser = argparse.ArgumentParser(prog="covsplat")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log progress at INFO level")
    sub = parser.add_subparsers(dest="command")

    p_run = sub.add_parser("run", help="Track, map, post-process and evaluate a sequence")
    p_run.add_argument("--dataset", help="Dataset directory")
    p_run.add_argument("--format", choices=("synthetic", "tum"), help="Dataset layout (default: synthetic)")
    p_run.add_argument("--config", help="key = value config file")
    p_run.add_argument("--mode", choices=("interleaved", "concurrent"))
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override one config key (repeatable)")
    p_run.add_argument("--out", required=True, help="Output directory")

    p_eval = sub.add_parser("eval", help="Re-evaluate a finished run directory")
    p_eval.add_argument("--run", required=True, help="Directory written by 'run'")

    p_abl = sub.add_parser("ablate", help="Mapping ablations on a synthetic scene")
    p_abl.add_argument("name", choices=ABLATIONS)
    p_abl.add_argument("--dataset", help="Synthetic dataset directory (default: generated box orbit)")
    p_abl.add_argument("--repeats", type=int, default=1)
    p_abl.add_argument("--seed", type=int, default=0)
    p_abl.add_argument("--post-process", type=int, default=500, help="Post-processing steps for 'decay'")
    p_abl.add_argument("--out", help="Directory for CSV results")

    p_render = sub.add_parser("render", help="Render a checkpoint from a keyframe or explicit pose")
    p_render.add_argument("--checkpoint", required=True, help="map.igs written by 'run'")
    p_render.add_argument("--pose", required=True, help="Keyframe id, 'tx ty tz qx qy qz qw' or a 4x4 matrix")
    p_render.add_argument("--out", required=True, help="Output PNG")

    p_gen = sub.add_parser("generate", help="Write a synthetic scene to disk")
    p_gen.add_argument("--kind", choices=("box", "gaussians"), default="box")
    p_gen.add_argument("--trajectory", choices=("orbit", "line", "loop"), default="orbit")
    p_gen.add_argument("--frames", type=int, default=60)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    setup_logging(logging.INFO if args.verbose else logging.WARNING)

    handlers = {
        "run": _cmd_run,
        "eval": _cmd_eval,
        "ablate": _cmd_ablate,
        "render": _cmd_render,
        "generate": _cmd_generate,
    }
    handler = handlers.get(args.command)
    if handler is None:
        parser.print_help()
        return 1
    try:
        handler(args)
    except CovsplatError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}")
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
