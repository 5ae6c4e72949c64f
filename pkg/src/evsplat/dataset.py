"""Dataset manifest format and ingestion.

A dataset is one JSON manifest (``format_version: 1``) plus the files it
references, all relative to the manifest's directory: blurry frames (8-bit
PNG for inspection, 32-bit float ``.npy`` for lossless use), per-view event
text files, an initial point list, and optional sharp ground truth for the
training views and for held-out test poses.

Loading is eager and strict: every referenced file is read and every
invariant checked up front, with errors naming the offending file (and
line, where there is one).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ManifestError
from .events import EventStream, read_event_file
from .gaussians import Camera, quat_to_rotmat
from .trainer import View

MANIFEST_VERSION = 1


def write_png(path, image: np.ndarray) -> None:
    """8-bit PNG with values clipped to [0, 1]."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB" if data.ndim == 3 else "L").save(path)


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def write_float_image(path, image: np.ndarray) -> None:
    np.save(path, np.asarray(image, dtype=np.float32))


def read_float_image(path) -> np.ndarray:
    return np.load(path).astype(np.float64)


def write_points_file(path, points: np.ndarray,
                      colors: np.ndarray | None = None) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    with open(path, "w") as fh:
        fh.write("# x y z" + (" r g b" if colors is not None else "") + "\n")
        for i, p in enumerate(points):
            row = list(p) + (list(colors[i]) if colors is not None else [])
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_points_file(path):
    points = []
    colors = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (3, 6):
                raise ManifestError(
                    f"{path}:{lineno}: expected 3 or 6 columns, got {len(parts)}"
                )
            try:
                vals = [float(v) for v in parts]
            except ValueError:
                raise ManifestError(
                    f"{path}:{lineno}: unparseable point record"
                ) from None
            points.append(vals[:3])
            if len(vals) == 6:
                colors.append(vals[3:])
    if not points:
        raise ManifestError(f"{path}: no points found")
    if colors and len(colors) != len(points):
        raise ManifestError(
            f"{path}: some records carry colors and others do not"
        )
    return (
        np.array(points, dtype=np.float64),
        np.array(colors, dtype=np.float64) if colors else None,
    )


def save_manifest(manifest: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_manifest(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"{path}: manifest not found")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    version = manifest.get("format_version")
    if version != MANIFEST_VERSION:
        raise ManifestError(
            f"{path}: unsupported format_version {version!r} "
            f"(expected {MANIFEST_VERSION})"
        )
    return manifest


@dataclass
class TestView:
    """A held-out pose with (optionally) its sharp ground-truth render."""

    name: str
    camera: Camera
    sharp: np.ndarray | None


@dataclass
class Dataset:
    views: list
    test_views: list
    points: np.ndarray
    point_colors: np.ndarray | None
    intrinsics: dict
    n_latents: int
    background: tuple[float, float, float]
    root: Path


def _require(manifest: dict, key: str, path) -> object:
    if key not in manifest:
        raise ManifestError(f"{path}: manifest is missing {key!r}")
    return manifest[key]


def _resolve(root: Path, rel: str, path, context: str) -> Path:
    target = root / rel
    if not target.exists():
        raise ManifestError(f"{path}: {context} file {str(target)!r} not found")
    return target


def _camera_from_pose(pose: dict, intr: dict, path, context: str) -> Camera:
    for key in ("q", "t"):
        if key not in pose:
            raise ManifestError(f"{path}: {context} pose is missing {key!r}")
    q = np.asarray(pose["q"], dtype=np.float64)
    t = np.asarray(pose["t"], dtype=np.float64)
    if q.shape != (4,) or t.shape != (3,):
        raise ManifestError(
            f"{path}: {context} pose has malformed q/t "
            f"(shapes {q.shape}, {t.shape})"
        )
    try:
        rotation = quat_to_rotmat(q)
    except ValueError as exc:
        raise ManifestError(f"{path}: {context} pose: {exc}") from None
    return Camera(
        rotation=rotation,
        translation=t,
        fx=intr["fx"], fy=intr["fy"], cx=intr["cx"], cy=intr["cy"],
        width=intr["width"], height=intr["height"],
    )


def load_dataset(path) -> Dataset:
    """Load and fully validate a dataset from its manifest."""
    path = Path(path)
    manifest = load_manifest(path)
    root = path.parent

    intr = _require(manifest, "intrinsics", path)
    for key in ("fx", "fy", "cx", "cy", "width", "height"):
        if key not in intr:
            raise ManifestError(f"{path}: intrinsics are missing {key!r}")
    width, height = int(intr["width"]), int(intr["height"])
    n_latents = int(_require(manifest, "n_latents", path))
    if n_latents < 2:
        raise ManifestError(f"{path}: n_latents must be >= 2, got {n_latents}")

    points_rel = _require(manifest, "points", path)
    points, point_colors = read_points_file(
        _resolve(root, points_rel, path, "points")
    )

    view_entries = _require(manifest, "views", path)
    if not view_entries:
        raise ManifestError(f"{path}: manifest contains no views")

    views = []
    for entry in view_entries:
        name = entry.get("name", f"view_{len(views):03d}")
        exposure = entry.get("exposure")
        if (
            not isinstance(exposure, (list, tuple))
            or len(exposure) != 2
            or not exposure[1] > exposure[0]
        ):
            raise ManifestError(
                f"{path}: view {name!r} has invalid exposure {exposure!r}"
            )
        t0, t1 = float(exposure[0]), float(exposure[1])

        if "blurry_npy" in entry:
            blurry = read_float_image(
                _resolve(root, entry["blurry_npy"], path, f"view {name!r} blurry")
            )
        elif "blurry_png" in entry:
            blurry = read_png(
                _resolve(root, entry["blurry_png"], path, f"view {name!r} blurry")
            )
        else:
            raise ManifestError(
                f"{path}: view {name!r} has neither blurry_npy nor blurry_png"
            )
        if blurry.shape != (height, width, 3):
            raise ManifestError(
                f"{path}: view {name!r} blurry image has shape {blurry.shape}, "
                f"expected {(height, width, 3)}"
            )

        poses = entry.get("poses", [])
        if len(poses) != n_latents:
            raise ManifestError(
                f"{path}: view {name!r} has {len(poses)} poses, "
                f"expected n_latents={n_latents}"
            )
        cameras = [
            _camera_from_pose(p, intr, path, f"view {name!r}") for p in poses
        ]

        events_rel = entry.get("events")
        if events_rel is None:
            raise ManifestError(f"{path}: view {name!r} is missing its event file")
        stream = read_event_file(
            _resolve(root, events_rel, path, f"view {name!r} events"),
            t0, t1, width, height,
        )

        sharp = None
        if "sharp_npy" in entry:
            sharp = read_float_image(
                _resolve(root, entry["sharp_npy"], path, f"view {name!r} sharp")
            )
            if sharp.shape != (n_latents, height, width, 3):
                raise ManifestError(
                    f"{path}: view {name!r} sharp stack has shape "
                    f"{sharp.shape}, expected {(n_latents, height, width, 3)}"
                )

        views.append(
            View(
                blurry=blurry,
                exposure=(t0, t1),
                poses=cameras,
                stream=stream,
                name=name,
                sharp=sharp,
            )
        )

    test_views = []
    for entry in manifest.get("test_views", []):
        name = entry.get("name", f"test_{len(test_views):03d}")
        pose = entry.get("pose")
        if pose is None:
            raise ManifestError(f"{path}: test view {name!r} is missing its pose")
        camera = _camera_from_pose(pose, intr, path, f"test view {name!r}")
        sharp = None
        if "sharp_npy" in entry:
            sharp = read_float_image(
                _resolve(root, entry["sharp_npy"], path,
                         f"test view {name!r} sharp")
            )
            if sharp.shape != (height, width, 3):
                raise ManifestError(
                    f"{path}: test view {name!r} sharp image has shape "
                    f"{sharp.shape}, expected {(height, width, 3)}"
                )
        test_views.append(TestView(name=name, camera=camera, sharp=sharp))

    background = manifest.get("background", [0.0, 0.0, 0.0])
    if not isinstance(background, (list, tuple)) or len(background) != 3:
        raise ManifestError(f"{path}: invalid background {background!r}")

    return Dataset(
        views=views,
        test_views=test_views,
        points=points,
        point_colors=point_colors,
        intrinsics=dict(intr),
        n_latents=n_latents,
        background=tuple(float(v) for v in background),
        root=root,
    )
