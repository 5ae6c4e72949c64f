"""Command-line interface: simulate, deblur, train, render, eval, bench."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .dataset import (
    load_dataset,
    read_float_image,
    write_float_image,
    write_png,
)
from .edi import reconstruct_latents
from .errors import EvsplatError
from .evaluation import MODES, evaluate
from .events import Thresholds
from .gaussians import Camera, load_scene, quat_to_rotmat, save_scene
from .losses import LossWeights
from .rasterizer import render
from .synthetic import SyntheticSpec, generate_synthetic, make_demo_scene, look_at
from .trainer import LearningRates, TrainConfig, Trainer, init_scene_from_points


def _add_background(parser) -> None:
    parser.add_argument(
        "--background", type=float, nargs=3, default=(0.0, 0.0, 0.0),
        metavar=("R", "G", "B"), help="background color (default black)",
    )


def _load_camera_file(path) -> Camera:
    with open(path) as fh:
        spec = json.load(fh)
    pose = spec["pose"]
    return Camera(
        rotation=quat_to_rotmat(np.asarray(pose["q"], dtype=np.float64)),
        translation=np.asarray(pose["t"], dtype=np.float64),
        fx=spec["fx"], fy=spec["fy"], cx=spec["cx"], cy=spec["cy"],
        width=spec["width"], height=spec["height"],
    )


def _cmd_simulate(args) -> int:
    scene = make_demo_scene(
        n_splats=args.gaussians, seed=args.seed, gray=args.gray
    )
    spec = SyntheticSpec(
        scene=scene,
        width=args.width,
        height=args.height,
        focal=args.focal,
        n_views=args.n_views,
        n_latents=args.n_latents,
        n_test_views=args.n_test_views,
        thresholds=Thresholds(args.c_pos, args.c_neg),
        exposure=args.exposure,
        orbit_radius=args.orbit_radius,
        shake_translation=args.shake,
        shake_rotation=args.shake_rotation,
        background=tuple(args.background),
        n_points=args.n_points,
        seed=args.seed,
    )
    manifest = generate_synthetic(spec, args.output_dir)
    print(f"wrote {manifest}")
    return 0


def _cmd_deblur(args) -> int:
    dataset = load_dataset(args.dataset)
    if not 0 <= args.view < len(dataset.views):
        raise ValueError(
            f"view index {args.view} out of range "
            f"(dataset has {len(dataset.views)} views)"
        )
    view = dataset.views[args.view]
    n = args.n_latents or dataset.n_latents
    thresholds = Thresholds(args.c_pos, args.c_neg)
    latents = reconstruct_latents(view.blurry, view.stream, n, thresholds)

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_float_image(out / f"{view.name}_latents.npy", latents.images)
    for i in range(n):
        write_png(out / f"{view.name}_latent_{i}.png", latents.images[i])
    print(f"wrote {n} latent images to {out}")
    return 0


def _parse_config_file(path) -> dict:
    values: dict = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
    return values


_CONFIG_INT = {"iterations", "seed", "threads", "checkpoint_interval",
               "event_pairs", "n_latents"}
_CONFIG_FLOAT = {"w_event", "w_dssim", "c_pos", "c_neg", "scene_extent",
                 "lr_position", "lr_position_final", "lr_color",
                 "lr_opacity", "lr_scale", "lr_rotation"}
_CONFIG_BOOL = {"deterministic"}


def _coerce_config(values: dict) -> dict:
    out: dict = {}
    for key, raw in values.items():
        if key in _CONFIG_INT:
            out[key] = int(raw)
        elif key in _CONFIG_FLOAT:
            out[key] = float(raw)
        elif key in _CONFIG_BOOL:
            out[key] = raw.lower() in ("1", "true", "yes", "on")
        elif key == "background":
            out[key] = tuple(float(v) for v in raw.replace(",", " ").split())
        else:
            raise ValueError(f"unknown config key {key!r}")
    return out


def _build_train_config(args, n_latents: int, background) -> TrainConfig:
    cfg = {
        "iterations": 2000,
        "seed": 0,
        "w_event": 0.005,
        "w_dssim": 0.2,
        "c_pos": 0.2,
        "c_neg": 0.3,
        "threads": 1,
        "deterministic": False,
        "checkpoint_interval": 1000,
        "event_pairs": 1,
        "background": tuple(background),
        "scene_extent": None,
        "lr_position": 1.6e-4,
        "lr_position_final": 1.6e-6,
        "lr_color": 2.5e-3,
        "lr_opacity": 5e-2,
        "lr_scale": 5e-3,
        "lr_rotation": 1e-3,
        "n_latents": n_latents,
    }
    if args.config:
        cfg.update(_coerce_config(_parse_config_file(args.config)))
    for key in ("iterations", "seed", "w_event", "threads",
                "checkpoint_interval", "n_latents"):
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    if args.deterministic:
        cfg["deterministic"] = True
    if args.background is not None:
        cfg["background"] = tuple(args.background)
    if cfg["n_latents"] != n_latents:
        raise ValueError(
            f"configured n_latents={cfg['n_latents']} does not match the "
            f"dataset's {n_latents}"
        )
    return TrainConfig(
        iterations=cfg["iterations"],
        weights=LossWeights(
            w_dssim=cfg["w_dssim"],
            w_event=cfg["w_event"],
            n=n_latents,
            thresholds=Thresholds(cfg["c_pos"], cfg["c_neg"]),
        ),
        lrs=LearningRates(
            position=cfg["lr_position"],
            position_final=cfg["lr_position_final"],
            color=cfg["lr_color"],
            opacity=cfg["lr_opacity"],
            scale=cfg["lr_scale"],
            rotation=cfg["lr_rotation"],
        ),
        seed=cfg["seed"],
        background=cfg["background"],
        deterministic=cfg["deterministic"],
        threads=cfg["threads"],
        checkpoint_interval=cfg["checkpoint_interval"],
        event_pairs=cfg["event_pairs"],
        scene_extent=cfg["scene_extent"],
    )


def _cmd_train(args) -> int:
    dataset = load_dataset(args.dataset)
    config = _build_train_config(args, dataset.n_latents, dataset.background)
    scene = init_scene_from_points(
        dataset.points, dataset.point_colors, seed=config.seed
    )
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(scene, config, views=dataset.views)
    trainer.train(
        dataset.views,
        log_path=out / "log.csv",
        checkpoint_dir=out / "checkpoints",
    )
    save_scene(out / "scene.txt", trainer.scene)
    print(f"trained {config.iterations} iterations; scene at {out / 'scene.txt'}")
    return 0


def _resolve_render_camera(args) -> Camera:
    if args.camera:
        return _load_camera_file(args.camera)
    if args.dataset is None:
        raise ValueError("render needs either --camera or --dataset")
    dataset = load_dataset(args.dataset)
    if args.test_view is not None:
        return dataset.test_views[args.test_view].camera
    view = dataset.views[args.view]
    return view.poses[args.pose]


def _cmd_render(args) -> int:
    scene = load_scene(args.scene)
    cam = _resolve_render_camera(args)
    out = render(scene, cam, tuple(args.background))
    write_png(args.output, out.image)
    if args.float_output:
        write_float_image(args.float_output, out.image)
    print(f"wrote {args.output}")
    return 0


def _cmd_eval(args) -> int:
    scene = load_scene(args.scene)
    dataset = load_dataset(args.dataset)
    background = (
        dataset.background if args.background is None else tuple(args.background)
    )
    report = evaluate(scene, dataset, args.mode, background)
    print(report.to_table())
    if args.output_csv:
        Path(args.output_csv).write_text(report.to_csv())
    return 0


def _cmd_bench(args) -> int:
    if args.scene:
        scene = load_scene(args.scene)
    else:
        scene = make_demo_scene(n_splats=args.gaussians, seed=args.seed)
    if args.camera:
        cam = _load_camera_file(args.camera)
    else:
        half = (args.width - 1) / 2.0
        cam = look_at(
            (4.0, 0.0, 0.8), (0.0, 0.0, 0.0),
            fx=args.focal, fy=args.focal, cx=half, cy=(args.height - 1) / 2.0,
            width=args.width, height=args.height,
        )
    for _ in range(args.warmup):
        render(scene, cam, tuple(args.background))
    samples = []
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        render(scene, cam, tuple(args.background))
        samples.append((time.perf_counter() - t0) * 1000.0)
    samples = np.asarray(samples)
    mean = float(samples.mean())
    spread = float(samples.std() / mean) if mean > 0 else 0.0
    print(
        f"frames: {args.repeats}  ms/frame: {mean:.3f} "
        f"(min {samples.min():.3f}, max {samples.max():.3f})  "
        f"fps: {1000.0 / mean:.2f}  spread: {100.0 * spread:.2f}%"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evsplat",
        description=(
            "Event-assisted deblurring and novel view synthesis "
            "with Gaussian splatting"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--focal", type=float, default=70.0)
    p.add_argument("--n-views", type=int, default=4)
    p.add_argument("--n-latents", type=int, default=5)
    p.add_argument("--n-test-views", type=int, default=2)
    p.add_argument("--gaussians", type=int, default=12)
    p.add_argument("--n-points", type=int, default=200)
    p.add_argument("--c-pos", type=float, default=0.2)
    p.add_argument("--c-neg", type=float, default=0.3)
    p.add_argument("--exposure", type=float, default=0.5)
    p.add_argument("--orbit-radius", type=float, default=4.0)
    p.add_argument("--shake", type=float, default=0.2)
    p.add_argument("--shake-rotation", type=float, default=0.005)
    p.add_argument("--gray", action="store_true",
                   help="gray-valued splats (R=G=B)")
    p.add_argument(
        "--background", type=float, nargs=3, default=(0.15, 0.15, 0.15),
        metavar=("R", "G", "B"),
    )
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("deblur", help="reconstruct latent sharp images")
    p.add_argument("--dataset", required=True)
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--n-latents", type=int, default=None)
    p.add_argument("--c-pos", type=float, default=0.2)
    p.add_argument("--c-neg", type=float, default=0.3)
    p.set_defaults(func=_cmd_deblur)

    p = sub.add_parser("train", help="optimize a scene against a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--w-event", dest="w_event", type=float, default=None)
    p.add_argument("--n-latents", dest="n_latents", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--checkpoint-interval", dest="checkpoint_interval",
                   type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--background", type=float, nargs=3, default=None,
                   metavar=("R", "G", "B"))
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("render", help="render a scene from one camera")
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", default=None, help="camera manifest JSON")
    p.add_argument("--dataset", default=None)
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--pose", type=int, default=0)
    p.add_argument("--test-view", dest="test_view", type=int, default=None)
    p.add_argument("--output", required=True)
    p.add_argument("--float-output", dest="float_output", default=None)
    _add_background(p)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("eval", help="score a scene against ground truth")
    p.add_argument("--scene", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=MODES, default="deblur")
    p.add_argument("--output-csv", dest="output_csv", default=None)
    p.add_argument("--background", type=float, nargs=3, default=None,
                   metavar=("R", "G", "B"),
                   help="override the dataset background color")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="wall-clock rendering benchmark")
    p.add_argument("--scene", default=None)
    p.add_argument("--camera", default=None)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--gaussians", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--focal", type=float, default=140.0)
    _add_background(p)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (EvsplatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
