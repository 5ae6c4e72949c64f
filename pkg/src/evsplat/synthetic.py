"""Synthetic dataset generation: the ground-truth oracle for end-to-end tests.

Each view exposes while the camera shakes from a start pose to an end pose
(translation interpolated linearly, rotation by slerp).  The latent sharp
frames are rendered with the package's own rasterizer, averaged into the
blurry frame, and fed through the ideal event simulator, so every emitted
quantity is consistent with the pipeline by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (
    save_manifest,
    write_float_image,
    write_png,
    write_points_file,
)
from .errors import InvalidSpecError
from .events import Thresholds, simulate_events, write_event_file
from .gaussians import (
    Camera,
    Scene,
    Z_NEAR,
    covariance_3d,
    quat_to_rotmat,
    rotmat_to_quat,
    save_scene,
)
from .losses import synthesize_blur, to_grayscale
from .rasterizer import render


def look_at(eye, target, up=(0.0, 0.0, 1.0),
            fx=70.0, fy=70.0, cx=31.5, cy=31.5, width=64, height=64) -> Camera:
    """World-to-camera pose with +z forward and image rows growing downward."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("look_at target coincides with the eye position")
    forward = forward / norm
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-12:
        raise ValueError("view direction is parallel to the up vector")
    right = right / rnorm
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    return Camera(
        rotation=rotation,
        translation=-rotation @ eye,
        fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height,
    )


def slerp(q0: np.ndarray, q1: np.ndarray, t: float) -> np.ndarray:
    """Spherical-linear interpolation between unit quaternions."""
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    dot = float(q0 @ q1)
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-10:
        out = (1.0 - t) * q0 + t * q1
        return out / np.linalg.norm(out)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    out = (np.sin((1.0 - t) * theta) / s) * q0 + (np.sin(t * theta) / s) * q1
    return out / np.linalg.norm(out)


def interpolate_pose(start: Camera, end: Camera, t: float) -> Camera:
    """Pose between two cameras: lerp translation, slerp rotation."""
    q = slerp(rotmat_to_quat(start.rotation), rotmat_to_quat(end.rotation), t)
    translation = (1.0 - t) * start.translation + t * end.translation
    return Camera(
        rotation=quat_to_rotmat(q),
        translation=translation,
        fx=start.fx, fy=start.fy, cx=start.cx, cy=start.cy,
        width=start.width, height=start.height,
    )


@dataclass
class SyntheticSpec:
    """Everything that defines one synthetic dataset."""

    scene: Scene
    width: int = 64
    height: int = 64
    focal: float = 70.0
    n_views: int = 4
    n_latents: int = 5
    n_test_views: int = 2
    thresholds: Thresholds = field(default_factory=Thresholds)
    exposure: float = 0.5
    orbit_radius: float = 4.0
    orbit_height: float = 0.8
    # Shake small enough that per-pixel intensity stays near-monotone over
    # the exposure: with asymmetric thresholds, a rise-and-fall excursion
    # leaves uncancelled events that the two-endpoint count estimate
    # cannot see.  The bright background bounds log-intensity swings.
    shake_translation: float = 0.2
    shake_rotation: float = 0.005  # radians of orientation wobble
    background: tuple[float, float, float] = (0.15, 0.15, 0.15)
    n_points: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_views < 1 or self.n_latents < 2:
            raise InvalidSpecError(
                "need at least one view and two latents per exposure"
            )
        if self.exposure <= 0:
            raise InvalidSpecError("exposure must be positive")


def make_demo_scene(
    n_splats: int = 12,
    seed: int = 0,
    gray: bool = False,
    color_range: tuple[float, float] = (0.35, 0.75),
) -> Scene:
    """A random blobby cluster of splats around the origin."""
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, 0.7, size=(n_splats, 3))
    quats = rng.normal(size=(n_splats, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    log_scales = rng.uniform(np.log(0.16), np.log(0.3), size=(n_splats, 3))
    opacity_logits = rng.uniform(1.5, 3.0, size=n_splats)
    lo, hi = color_range
    if gray:
        levels = rng.uniform(lo, hi, size=(n_splats, 1))
        colors = np.repeat(levels, 3, axis=1)
    else:
        colors = rng.uniform(lo, hi, size=(n_splats, 3))
    return Scene(means, quats, log_scales, opacity_logits, colors)


def sample_points_from_scene(
    scene: Scene, count: int, rng: np.random.Generator
):
    """Draw near-surface points (and their colors) from the splat mixture."""
    idx = rng.integers(len(scene), size=count)
    points = np.empty((count, 3))
    for row, i in enumerate(idx):
        cov = covariance_3d(scene.quats[i], scene.log_scales[i])
        points[row] = rng.multivariate_normal(scene.means[i], cov)
    return points, scene.colors[idx].copy()


def _pose_record(cam: Camera) -> dict:
    return {
        "q": [float(v) for v in rotmat_to_quat(cam.rotation)],
        "t": [float(v) for v in cam.translation],
    }


def _check_renderable(scene: Scene, cam: Camera, context: str) -> None:
    depths = scene.means @ cam.rotation.T[:, 2] + cam.translation[2]
    if not np.any(depths > Z_NEAR):
        raise InvalidSpecError(
            f"{context}: every splat is behind the near plane"
        )


def generate_synthetic(spec: SyntheticSpec, out_dir) -> Path:
    """Render, simulate, and write a full dataset; returns the manifest path.

    Deterministic: a fixed spec (seed included) produces byte-identical
    files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    intr = {
        "fx": spec.focal, "fy": spec.focal,
        "cx": (spec.width - 1) / 2.0, "cy": (spec.height - 1) / 2.0,
        "width": spec.width, "height": spec.height,
    }

    def orbit_pose(angle: float) -> Camera:
        eye = np.array(
            [
                spec.orbit_radius * np.cos(angle),
                spec.orbit_radius * np.sin(angle),
                spec.orbit_height,
            ]
        )
        return look_at(
            eye, np.zeros(3),
            fx=intr["fx"], fy=intr["fy"], cx=intr["cx"], cy=intr["cy"],
            width=spec.width, height=spec.height,
        )

    timestamps = np.linspace(0.0, spec.exposure, spec.n_latents)
    fractions = timestamps / spec.exposure

    view_entries = []
    for v in range(spec.n_views):
        name = f"view_{v:03d}"
        angle = 2.0 * np.pi * v / spec.n_views
        start = orbit_pose(angle)
        # Translate by a fixed length in the image plane (random direction
        # with the view axis projected out) while keeping the orientation,
        # plus a small independent rotation wobble.  Re-aiming at the
        # target would cancel the translation for points near it.
        forward = -start.center()
        forward /= np.linalg.norm(forward)
        direction = rng.normal(size=3)
        direction -= (direction @ forward) * forward
        direction /= np.linalg.norm(direction)
        center_end = start.center() + direction * spec.shake_translation
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        half = 0.5 * spec.shake_rotation
        wobble = quat_to_rotmat(
            np.concatenate([[np.cos(half)], np.sin(half) * axis])
        )
        rot_end = wobble @ start.rotation
        end = Camera(
            rotation=rot_end,
            translation=-rot_end @ center_end,
            fx=start.fx, fy=start.fy, cx=start.cx, cy=start.cy,
            width=start.width, height=start.height,
        )

        poses = [interpolate_pose(start, end, float(f)) for f in fractions]
        for pose in poses:
            _check_renderable(spec.scene, pose, name)
        latents = np.stack(
            [render(spec.scene, pose, spec.background).image for pose in poses]
        )
        blurry = synthesize_blur(latents)
        stream = simulate_events(
            np.stack([to_grayscale(img) for img in latents]),
            timestamps,
            spec.thresholds,
        )

        write_float_image(out_dir / f"{name}_blurry.npy", blurry)
        write_png(out_dir / f"{name}_blurry.png", blurry)
        write_float_image(out_dir / f"{name}_sharp.npy", latents)
        sharp_pngs = []
        for i in range(spec.n_latents):
            png = f"{name}_sharp_{i}.png"
            write_png(out_dir / png, latents[i])
            sharp_pngs.append(png)
        write_event_file(out_dir / f"{name}_events.txt", stream)

        view_entries.append(
            {
                "name": name,
                "exposure": [0.0, spec.exposure],
                "blurry_png": f"{name}_blurry.png",
                "blurry_npy": f"{name}_blurry.npy",
                "events": f"{name}_events.txt",
                "poses": [_pose_record(p) for p in poses],
                "sharp_npy": f"{name}_sharp.npy",
                "sharp_png": sharp_pngs,
            }
        )

    test_entries = []
    for v in range(spec.n_test_views):
        name = f"test_{v:03d}"
        # Held-out poses sit between the training orbit stops.
        angle = 2.0 * np.pi * (v + 0.5) / max(spec.n_views, 1)
        pose = orbit_pose(angle)
        _check_renderable(spec.scene, pose, name)
        sharp = render(spec.scene, pose, spec.background).image
        write_float_image(out_dir / f"{name}_sharp.npy", sharp)
        write_png(out_dir / f"{name}_sharp.png", sharp)
        test_entries.append(
            {
                "name": name,
                "pose": _pose_record(pose),
                "sharp_npy": f"{name}_sharp.npy",
                "sharp_png": f"{name}_sharp.png",
            }
        )

    points, _colors = sample_points_from_scene(spec.scene, spec.n_points, rng)
    write_points_file(out_dir / "points.txt", points)
    save_scene(out_dir / "gt_scene.txt", spec.scene)

    manifest = {
        "format_version": 1,
        "n_latents": spec.n_latents,
        "background": [float(v) for v in spec.background],
        "intrinsics": intr,
        "points": "points.txt",
        "views": view_entries,
        "test_views": test_entries,
    }
    manifest_path = out_dir / "manifest.json"
    save_manifest(manifest, manifest_path)
    return manifest_path
