"""Gaussian splat primitives and the camera / covariance math.

A splat is parameterized for unconstrained optimization: rotation as a
quaternion (normalized on use), per-axis scales in log space, opacity as a
logit.  World-space covariance is R S S^T R^T; its screen-space projection
uses the affine (Jacobian) approximation of the perspective map plus a
small isotropic dilation that acts as a low-pass filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidSceneError

# Inherited rasterization defaults: near-plane depth cull and the
# screen-space low-pass dilation added to both diagonal entries (pixel^2).
Z_NEAR = 0.01
COV_DILATION = 0.3


def normalize_quaternion(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q)
    if norm < 1e-12:
        raise ValueError("cannot normalize a zero quaternion")
    return q / norm


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a quaternion given as (w, x, y, z); normalizes first."""
    w, x, y, z = normalize_quaternion(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotmat_to_quat(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix (Shepperd's method)."""
    rot = np.asarray(rot, dtype=np.float64)
    m00, m11, m22 = rot[0, 0], rot[1, 1], rot[2, 2]
    trace = m00 + m11 + m22
    if trace > 0:
        s = 2.0 * np.sqrt(trace + 1.0)
        q = np.array(
            [0.25 * s,
             (rot[2, 1] - rot[1, 2]) / s,
             (rot[0, 2] - rot[2, 0]) / s,
             (rot[1, 0] - rot[0, 1]) / s]
        )
    elif m00 >= m11 and m00 >= m22:
        s = 2.0 * np.sqrt(1.0 + m00 - m11 - m22)
        q = np.array(
            [(rot[2, 1] - rot[1, 2]) / s,
             0.25 * s,
             (rot[0, 1] + rot[1, 0]) / s,
             (rot[0, 2] + rot[2, 0]) / s]
        )
    elif m11 >= m22:
        s = 2.0 * np.sqrt(1.0 + m11 - m00 - m22)
        q = np.array(
            [(rot[0, 2] - rot[2, 0]) / s,
             (rot[0, 1] + rot[1, 0]) / s,
             0.25 * s,
             (rot[1, 2] + rot[2, 1]) / s]
        )
    else:
        s = 2.0 * np.sqrt(1.0 + m22 - m00 - m11)
        q = np.array(
            [(rot[1, 0] - rot[0, 1]) / s,
             (rot[0, 2] + rot[2, 0]) / s,
             (rot[1, 2] + rot[2, 1]) / s,
             0.25 * s]
        )
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class Gaussian3D:
    """One splat: world mean, rotation, log scales, opacity logit, RGB color."""

    mu: np.ndarray
    q: np.ndarray
    log_s: np.ndarray
    opacity_logit: float
    color: np.ndarray  # nominally in [0, 1]; unconstrained during optimization


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: world-to-camera rigid transform plus intrinsics.

    Pixel (ix, iy) has its center at coordinates (ix, iy); a world point X
    maps to camera space as ``rotation @ X + translation`` and then to the
    pixel plane through (fx, fy, cx, cy).
    """

    rotation: np.ndarray     # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=np.float64)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=np.float64)
        )
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if np.linalg.norm(rot @ rot.T - np.eye(3)) >= 1e-6:
            raise ValueError("camera rotation is not orthonormal")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor size must be positive")

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation


def covariance_3d(q: np.ndarray, log_s: np.ndarray) -> np.ndarray:
    """World-space covariance R S S^T R^T; symmetric positive definite."""
    rot = quat_to_rotmat(q)
    m = rot * np.exp(np.asarray(log_s, dtype=np.float64))[None, :]
    return m @ m.T


def projection_jacobian(cam: Camera, mu_cam: np.ndarray) -> np.ndarray:
    """Affine approximation of the perspective projection at a camera-space point."""
    tx, ty, tz = mu_cam
    return np.array(
        [
            [cam.fx / tz, 0.0, -cam.fx * tx / (tz * tz)],
            [0.0, cam.fy / tz, -cam.fy * ty / (tz * tz)],
        ]
    )


def project_covariance(
    sigma: np.ndarray, cam: Camera, mu_cam: np.ndarray
) -> np.ndarray | None:
    """Screen-space 2x2 covariance of a world-space Gaussian.

    Returns None when the splat is closer than the near plane (cull, not an
    error).  The low-pass dilation keeps the result invertible.
    """
    mu_cam = np.asarray(mu_cam, dtype=np.float64)
    if mu_cam[2] <= Z_NEAR:
        return None
    jac = projection_jacobian(cam, mu_cam)
    t = jac @ cam.rotation
    cov2d = t @ np.asarray(sigma, dtype=np.float64) @ t.T
    return cov2d + COV_DILATION * np.eye(2)


def gaussian_weight(delta: np.ndarray, sigma2d: np.ndarray) -> float:
    """Unnormalized Gaussian falloff exp(-0.5 d^T S^-1 d), in (0, 1]."""
    delta = np.asarray(delta, dtype=np.float64)
    inv = np.linalg.inv(np.asarray(sigma2d, dtype=np.float64))
    return float(np.exp(-0.5 * delta @ inv @ delta))


class Scene:
    """A set of splats stored as parallel arrays for vectorized rendering."""

    def __init__(
        self,
        means: np.ndarray,
        quats: np.ndarray,
        log_scales: np.ndarray,
        opacity_logits: np.ndarray,
        colors: np.ndarray,
    ) -> None:
        self.means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
        self.quats = np.asarray(quats, dtype=np.float64).reshape(-1, 4)
        self.log_scales = np.asarray(log_scales, dtype=np.float64).reshape(-1, 3)
        self.opacity_logits = np.asarray(opacity_logits, dtype=np.float64).reshape(-1)
        self.colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        if not (
            len(self.quats) == len(self.log_scales) == len(self.opacity_logits)
            == len(self.colors) == n
        ):
            raise ValueError("scene parameter arrays have mismatched lengths")

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian3D]) -> "Scene":
        return cls(
            means=np.array([g.mu for g in gaussians], dtype=np.float64),
            quats=np.array([g.q for g in gaussians], dtype=np.float64),
            log_scales=np.array([g.log_s for g in gaussians], dtype=np.float64),
            opacity_logits=np.array(
                [g.opacity_logit for g in gaussians], dtype=np.float64
            ),
            colors=np.array([g.color for g in gaussians], dtype=np.float64),
        )

    def __len__(self) -> int:
        return len(self.means)

    def gaussian(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            mu=self.means[i].copy(),
            q=self.quats[i].copy(),
            log_s=self.log_scales[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            color=self.colors[i].copy(),
        )

    def copy(self) -> "Scene":
        return Scene(
            self.means.copy(),
            self.quats.copy(),
            self.log_scales.copy(),
            self.opacity_logits.copy(),
            self.colors.copy(),
        )

    def validate_finite(self) -> None:
        for name in ("means", "quats", "log_scales", "opacity_logits", "colors"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidSceneError(f"non-finite values in scene {name}")


SCENE_FORMAT_HEADER = "# evsplat scene format_version 1"


def save_scene(path, scene: Scene) -> None:
    """Write a scene as one text record per splat.

    Columns: x y z qw qx qy qz ls1 ls2 ls3 opacity_logit r g b.
    """
    with open(path, "w") as fh:
        fh.write(SCENE_FORMAT_HEADER + "\n")
        for i in range(len(scene)):
            row = np.concatenate(
                [
                    scene.means[i],
                    scene.quats[i],
                    scene.log_scales[i],
                    [scene.opacity_logits[i]],
                    scene.colors[i],
                ]
            )
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_scene(path) -> Scene:
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != SCENE_FORMAT_HEADER:
            raise InvalidSceneError(
                f"{path}: unrecognized scene header {header!r}"
            )
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 14:
                raise InvalidSceneError(
                    f"{path}:{lineno}: expected 14 columns, got {len(parts)}"
                )
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise InvalidSceneError(
                    f"{path}:{lineno}: unparseable splat record"
                ) from None
    data = np.array(rows, dtype=np.float64).reshape(-1, 14)
    return Scene(
        means=data[:, 0:3],
        quats=data[:, 3:7],
        log_scales=data[:, 7:10],
        opacity_logits=data[:, 10],
        colors=data[:, 11:14],
    )
