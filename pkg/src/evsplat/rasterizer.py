"""Differentiable forward splatting and its analytic adjoint.

Forward semantics (shared by the fast path and the brute-force reference):

* splats with camera-space depth <= Z_NEAR are culled;
* survivors are composited front to back in depth order, ties broken by
  splat index (stable sort);
* per pixel, alpha = sigmoid(opacity_logit) * gaussian_weight, clamped to
  ALPHA_CLAMP; contributions with alpha < ALPHA_SKIP are skipped, and a
  pixel stops accepting contributions once its transmittance drops below
  TRANSMITTANCE_FLOOR;
* whatever transmittance remains multiplies the background color.

The fast path only visits a per-splat bounding box.  The box radius is the
larger of the 3-sigma extent and the iso-contour where alpha falls to
ALPHA_SKIP, so every pixel the box cuts off would have been skipped by the
alpha rule anyway; fast path and reference therefore agree to rounding.

The backward pass replays the forward compositing and differentiates every
smooth operation analytically (compositing, sigmoid, exp, quaternion
normalization, the projection Jacobian).  Discrete decisions (cull, sort
order, skip, clamp, termination) are treated as constant, so gradients are
exact wherever the forward map is differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSceneError
from .gaussians import (
    COV_DILATION,
    Camera,
    Scene,
    Z_NEAR,
    covariance_3d,
    gaussian_weight,
    project_covariance,
)

ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
TRANSMITTANCE_FLOOR = 1e-4


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class RenderOutput:
    """Composited color image and accumulated opacity."""

    image: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W), equals 1 - final transmittance


@dataclass
class SceneGradients:
    """Partials of a scalar loss with respect to every splat parameter."""

    d_means: np.ndarray
    d_quats: np.ndarray
    d_log_scales: np.ndarray
    d_opacity_logits: np.ndarray
    d_colors: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "SceneGradients":
        return cls(
            d_means=np.zeros((n, 3)),
            d_quats=np.zeros((n, 4)),
            d_log_scales=np.zeros((n, 3)),
            d_opacity_logits=np.zeros(n),
            d_colors=np.zeros((n, 3)),
        )

    def add_(self, other: "SceneGradients") -> "SceneGradients":
        self.d_means += other.d_means
        self.d_quats += other.d_quats
        self.d_log_scales += other.d_log_scales
        self.d_opacity_logits += other.d_opacity_logits
        self.d_colors += other.d_colors
        return self


@dataclass
class _Prepared:
    """Screen-space geometry of the splats that survived culling, depth ordered."""

    scene_indices: np.ndarray   # (K,) indices into the scene arrays
    tcam: np.ndarray            # (K, 3) camera-space means
    mean2d: np.ndarray          # (K, 2) projected centers, pixel units
    conic: np.ndarray           # (K, 2, 2) inverse 2-d covariance
    tmat: np.ndarray            # (K, 2, 3) J @ R_world_to_cam
    jac: np.ndarray             # (K, 2, 3) projection Jacobians
    sigma: np.ndarray           # (K, 3, 3) world covariances
    mmat: np.ndarray            # (K, 3, 3) R_splat @ diag(s)
    rmat: np.ndarray            # (K, 3, 3) splat rotations
    s: np.ndarray               # (K, 3) exp(log_s)
    qn: np.ndarray              # (K, 4) unit quaternions
    qnorm: np.ndarray           # (K,) raw quaternion norms
    sig_opa: np.ndarray         # (K,) sigmoid(opacity_logit)
    boxes: np.ndarray           # (K, 4) inclusive pixel bounds x0, x1, y0, y1


@dataclass
class _SplatRecord:
    """Per-splat forward state needed to replay compositing in reverse."""

    k: int                      # index into the _Prepared arrays
    box: tuple[int, int, int, int]
    dx: np.ndarray
    dy: np.ndarray
    weight: np.ndarray
    alpha: np.ndarray
    active: np.ndarray
    clamped: np.ndarray
    t_before: np.ndarray


@dataclass
class RenderCache:
    """Forward state retained so a backward pass can skip the re-render."""

    prepared: _Prepared
    records: list
    output: RenderOutput


def _prepare(scene: Scene, cam: Camera) -> _Prepared:
    scene.validate_finite()
    tcam = scene.means @ cam.rotation.T + cam.translation
    sig_opa_all = sigmoid(scene.opacity_logits)
    keep = (tcam[:, 2] > Z_NEAR) & (sig_opa_all >= ALPHA_SKIP)
    idx = np.flatnonzero(keep)
    if len(idx) == 0:
        return _Prepared(
            scene_indices=idx,
            tcam=np.zeros((0, 3)), mean2d=np.zeros((0, 2)),
            conic=np.zeros((0, 2, 2)), tmat=np.zeros((0, 2, 3)),
            jac=np.zeros((0, 2, 3)), sigma=np.zeros((0, 3, 3)),
            mmat=np.zeros((0, 3, 3)), rmat=np.zeros((0, 3, 3)),
            s=np.zeros((0, 3)), qn=np.zeros((0, 4)), qnorm=np.zeros(0),
            sig_opa=np.zeros(0), boxes=np.zeros((0, 4), dtype=np.int64),
        )

    # Stable depth sort; ties fall back to splat index.
    order = idx[np.argsort(tcam[idx, 2], kind="stable")]
    tcam = tcam[order]
    sig_opa = sig_opa_all[order]

    q = scene.quats[order]
    qnorm = np.linalg.norm(q, axis=1)
    if np.any(qnorm < 1e-12):
        raise InvalidSceneError("zero-norm quaternion in scene")
    qn = q / qnorm[:, None]
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    rmat = np.empty((len(order), 3, 3))
    rmat[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rmat[:, 0, 1] = 2 * (x * y - w * z)
    rmat[:, 0, 2] = 2 * (x * z + w * y)
    rmat[:, 1, 0] = 2 * (x * y + w * z)
    rmat[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rmat[:, 1, 2] = 2 * (y * z - w * x)
    rmat[:, 2, 0] = 2 * (x * z - w * y)
    rmat[:, 2, 1] = 2 * (y * z + w * x)
    rmat[:, 2, 2] = 1 - 2 * (x * x + y * y)

    s = np.exp(scene.log_scales[order])
    mmat = rmat * s[:, None, :]
    sigma = mmat @ mmat.swapaxes(1, 2)

    tx, ty, tz = tcam[:, 0], tcam[:, 1], tcam[:, 2]
    jac = np.zeros((len(order), 2, 3))
    jac[:, 0, 0] = cam.fx / tz
    jac[:, 0, 2] = -cam.fx * tx / (tz * tz)
    jac[:, 1, 1] = cam.fy / tz
    jac[:, 1, 2] = -cam.fy * ty / (tz * tz)

    tmat = jac @ cam.rotation
    cov2d = tmat @ sigma @ tmat.swapaxes(1, 2)
    cov2d[:, 0, 0] += COV_DILATION
    cov2d[:, 1, 1] += COV_DILATION

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.empty_like(cov2d)
    conic[:, 0, 0] = c / det
    conic[:, 0, 1] = -b / det
    conic[:, 1, 0] = -b / det
    conic[:, 1, 1] = a / det

    mean2d = np.stack(
        [cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy], axis=1
    )

    # Box radius: 3 sigma, or the alpha-skip iso-contour when opacity makes
    # the 3-sigma ring still visible; box-cut pixels are then always below
    # the skip threshold.
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    rsq = np.maximum(9.0, 2.0 * np.log(255.0 * sig_opa))
    radius = np.sqrt(rsq * lam_max)

    boxes = np.empty((len(order), 4), dtype=np.int64)
    boxes[:, 0] = np.clip(np.floor(mean2d[:, 0] - radius), 0, cam.width - 1)
    boxes[:, 1] = np.clip(np.ceil(mean2d[:, 0] + radius), 0, cam.width - 1)
    boxes[:, 2] = np.clip(np.floor(mean2d[:, 1] - radius), 0, cam.height - 1)
    boxes[:, 3] = np.clip(np.ceil(mean2d[:, 1] + radius), 0, cam.height - 1)
    # Drop splats whose footprint misses the sensor entirely.
    on_screen = (
        (mean2d[:, 0] + radius >= 0)
        & (mean2d[:, 0] - radius <= cam.width - 1)
        & (mean2d[:, 1] + radius >= 0)
        & (mean2d[:, 1] - radius <= cam.height - 1)
    )
    sel = np.flatnonzero(on_screen)
    return _Prepared(
        scene_indices=order[sel],
        tcam=tcam[sel], mean2d=mean2d[sel], conic=conic[sel],
        tmat=tmat[sel], jac=jac[sel], sigma=sigma[sel], mmat=mmat[sel],
        rmat=rmat[sel], s=s[sel], qn=qn[sel], qnorm=qnorm[sel],
        sig_opa=sig_opa[sel], boxes=boxes[sel],
    )


def _composite(
    scene: Scene, cam: Camera, prep: _Prepared, background, keep_records: bool
):
    image = np.zeros((cam.height, cam.width, 3))
    tgrid = np.ones((cam.height, cam.width))
    records = [] if keep_records else None

    for k in range(len(prep.scene_indices)):
        x0, x1, y0, y1 = prep.boxes[k]
        sl = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        dx = np.arange(x0, x1 + 1, dtype=np.float64) - prep.mean2d[k, 0]
        dy = np.arange(y0, y1 + 1, dtype=np.float64) - prep.mean2d[k, 1]
        ca = float(prep.conic[k, 0, 0])
        cb = float(prep.conic[k, 0, 1])
        cc = float(prep.conic[k, 1, 1])
        power = (-0.5 * ca) * (dx * dx)[None, :] + (-0.5 * cc) * (dy * dy)[:, None]
        power -= cb * np.multiply.outer(dy, dx)
        weight = np.exp(power)
        raw_alpha = prep.sig_opa[k] * weight
        alpha = np.minimum(ALPHA_CLAMP, raw_alpha)
        t_box = tgrid[sl]
        active = (alpha >= ALPHA_SKIP) & (t_box >= TRANSMITTANCE_FLOOR)
        # Masked alpha folds skip and termination into the arithmetic:
        # T_after = T_before * (1 - alpha * active).
        am = alpha * active
        contrib = t_box * am
        image[sl] += contrib[:, :, None] * scene.colors[prep.scene_indices[k]]
        if keep_records:
            records.append(
                _SplatRecord(
                    k=k,
                    box=(int(x0), int(x1), int(y0), int(y1)),
                    dx=dx,
                    dy=dy,
                    weight=weight,
                    alpha=alpha,
                    active=active,
                    clamped=raw_alpha >= ALPHA_CLAMP,
                    t_before=t_box.copy(),
                )
            )
        t_box *= 1.0 - am

    bg = np.asarray(background, dtype=np.float64).reshape(3)
    image += tgrid[:, :, None] * bg
    output = RenderOutput(image=image, alpha=1.0 - tgrid)
    return output, records


def render(
    scene: Scene,
    cam: Camera,
    background=(0.0, 0.0, 0.0),
    with_cache: bool = False,
):
    """Composite a scene into an image; deterministic for fixed inputs.

    With ``with_cache=True`` returns ``(RenderOutput, RenderCache)``; the
    cache lets :func:`render_backward` skip its internal re-render.
    """
    prep = _prepare(scene, cam)
    output, records = _composite(scene, cam, prep, background,
                                 keep_records=with_cache)
    if with_cache:
        return output, RenderCache(prepared=prep, records=records, output=output)
    return output


def _quat_grad_from_rotation_grad(qn: np.ndarray, d_r: np.ndarray) -> np.ndarray:
    """Contract rotation-matrix gradients with dR/dq for unit quaternions.

    Closed form of sum(d_r * dR/dq_k) for each component of (w, x, y, z);
    batched over the leading axis.
    """
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    s01 = d_r[:, 0, 1] + d_r[:, 1, 0]
    s10 = d_r[:, 1, 0] - d_r[:, 0, 1]
    s02 = d_r[:, 0, 2] + d_r[:, 2, 0]
    s20 = d_r[:, 0, 2] - d_r[:, 2, 0]
    s12 = d_r[:, 1, 2] + d_r[:, 2, 1]
    s21 = d_r[:, 2, 1] - d_r[:, 1, 2]
    return 2.0 * np.stack(
        [
            x * s21 + y * s20 + z * s10,
            y * s01 + z * s02 + w * s21 - 2.0 * x * (d_r[:, 1, 1] + d_r[:, 2, 2]),
            x * s01 + z * s12 + w * s20 - 2.0 * y * (d_r[:, 0, 0] + d_r[:, 2, 2]),
            x * s02 + y * s12 + w * s10 - 2.0 * z * (d_r[:, 0, 0] + d_r[:, 1, 1]),
        ],
        axis=1,
    )


def render_backward(
    scene: Scene,
    cam: Camera,
    background,
    upstream: np.ndarray,
    cache: RenderCache | None = None,
) -> SceneGradients:
    """Analytic adjoint of :func:`render`.

    ``upstream`` is the gradient of a scalar loss with respect to the
    rendered image.  Splats that touched no pixel with upstream signal get
    exactly zero gradient.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (cam.height, cam.width, 3):
        raise ValueError(
            f"upstream gradient shape {upstream.shape} does not match the "
            f"{cam.height}x{cam.width} sensor"
        )
    if cache is None:
        _, cache = render(scene, cam, background, with_cache=True)
    prep = cache.prepared

    grads = SceneGradients.zeros(len(scene))
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    # Gradient with respect to the running transmittance, seeded by the
    # background term image += T_final * bg.
    d_t = upstream @ bg

    # Phase 1, sequential in reverse depth order: walk the transmittance
    # chain, accumulate color gradients, and reduce each splat's pixel
    # contributions to scalar moments of d_power against (dx, dy).
    ks: list[int] = []
    moments: list[tuple] = []
    for rec in reversed(cache.records):
        if not rec.active.any():
            continue
        k = rec.k
        gi = prep.scene_indices[k]
        x0, x1, y0, y1 = rec.box
        sl = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        g_box = upstream[sl]

        gc = g_box @ scene.colors[gi]
        d_t_box = d_t[sl]
        active = rec.active
        # Color picks up alpha * T at every active pixel.
        w_eff = rec.alpha * rec.t_before * active
        grads.d_colors[gi] += g_box.reshape(-1, 3).T @ w_eff.ravel()

        diff = gc - d_t_box
        d_alpha = diff * rec.t_before * (active & ~rec.clamped)
        # Transmittance chain: T_after = T_before * (1 - alpha), and the
        # contribution itself used T_before; clamped pixels still update
        # d_t but pass no gradient into alpha.
        d_t_box += (rec.alpha * active) * diff

        if not np.any(d_alpha):
            continue

        # d_sig collects w * d_alpha; d_power = sig * w * d_alpha.
        wda = rec.weight * d_alpha
        d_sig = float(wda.sum())
        d_power = prep.sig_opa[k] * wda
        dx, dy = rec.dx, rec.dy
        t_x = d_power @ np.stack([dx, dx * dx], axis=1)  # (hb, 2)
        rowsum = d_power.sum(axis=1)
        ks.append(k)
        moments.append(
            (
                d_sig,
                float(t_x[:, 0].sum()),          # sum d_power * dx
                float(t_x[:, 1].sum()),          # sum d_power * dx^2
                float(dy @ t_x[:, 0]),           # sum d_power * dx * dy
                float(rowsum @ dy),              # sum d_power * dy
                float(rowsum @ (dy * dy)),       # sum d_power * dy^2
            )
        )
    if not ks:
        return grads

    # Phase 2, batched over the contributing splats: chain the moments
    # through conic inversion, projection, and the covariance
    # factorization.
    kk = np.asarray(ks)
    gis = prep.scene_indices[kk]
    d_sig, s_x, s_xx, s_xy, s_y, s_yy = np.asarray(moments).T

    conic = prep.conic[kk]
    ca, cb, cc = conic[:, 0, 0], conic[:, 0, 1], conic[:, 1, 1]
    d_mean2d = np.stack(
        [ca * s_x + cb * s_y, cb * s_x + cc * s_y], axis=1
    )
    d_conic = -0.5 * np.stack(
        [
            np.stack([s_xx, s_xy], axis=1),
            np.stack([s_xy, s_yy], axis=1),
        ],
        axis=1,
    )
    d_cov2d = -conic @ d_conic @ conic

    tmat = prep.tmat[kk]
    sigma = prep.sigma[kk]
    d_sigma = tmat.swapaxes(1, 2) @ d_cov2d @ tmat
    d_tmat = 2.0 * d_cov2d @ tmat @ sigma
    rot_cam = cam.rotation
    d_jac = d_tmat @ rot_cam.T

    # Camera-space mean: through the projected center (J is exactly dm/dt)
    # and through the Jacobian's own dependence on the camera-space point.
    jac = prep.jac[kk]
    d_tcam = np.einsum("kij,ki->kj", jac, d_mean2d)
    tx, ty, tz = prep.tcam[kk].T
    inv_z2 = 1.0 / (tz * tz)
    inv_z3 = inv_z2 / tz
    d_tcam[:, 0] += d_jac[:, 0, 2] * (-cam.fx * inv_z2)
    d_tcam[:, 1] += d_jac[:, 1, 2] * (-cam.fy * inv_z2)
    d_tcam[:, 2] += (
        d_jac[:, 0, 0] * (-cam.fx * inv_z2)
        + d_jac[:, 1, 1] * (-cam.fy * inv_z2)
        + d_jac[:, 0, 2] * (2.0 * cam.fx * tx * inv_z3)
        + d_jac[:, 1, 2] * (2.0 * cam.fy * ty * inv_z3)
    )
    grads.d_means[gis] += d_tcam @ rot_cam

    # Covariance factorization: Sigma = M M^T, M = R diag(s).
    mmat = prep.mmat[kk]
    d_m = 2.0 * d_sigma @ mmat
    s = prep.s[kk]
    d_r = d_m * s[:, None, :]
    d_s = np.sum(prep.rmat[kk] * d_m, axis=1)
    grads.d_log_scales[gis] += s * d_s

    qn = prep.qn[kk]
    d_qn = _quat_grad_from_rotation_grad(qn, d_r)
    proj = d_qn - qn * np.sum(qn * d_qn, axis=1, keepdims=True)
    grads.d_quats[gis] += proj / prep.qnorm[kk][:, None]

    sig = prep.sig_opa[kk]
    grads.d_opacity_logits[gis] += d_sig * sig * (1.0 - sig)
    return grads


def render_reference(
    scene: Scene, cam: Camera, background=(0.0, 0.0, 0.0)
) -> RenderOutput:
    """Brute-force per-pixel compositor used as the rendering oracle.

    Evaluates every surviving splat at every pixel with the scalar
    covariance/projection/weight operations; no bounding boxes.  Slow, for
    tests and debugging only.
    """
    scene.validate_finite()
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    depths = scene.means @ cam.rotation.T[:, 2] + cam.translation[2]
    order = [
        i for i in sorted(range(len(scene)), key=lambda i: depths[i])
        if depths[i] > Z_NEAR
    ]

    splats = []
    for i in order:
        mu_cam = cam.world_to_camera(scene.means[i])
        cov2d = project_covariance(
            covariance_3d(scene.quats[i], scene.log_scales[i]), cam, mu_cam
        )
        if cov2d is None:
            continue
        center = np.array(
            [
                cam.fx * mu_cam[0] / mu_cam[2] + cam.cx,
                cam.fy * mu_cam[1] / mu_cam[2] + cam.cy,
            ]
        )
        opa = float(sigmoid(scene.opacity_logits[i]))
        splats.append((center, cov2d, opa, scene.colors[i]))

    image = np.zeros((cam.height, cam.width, 3))
    alpha_out = np.zeros((cam.height, cam.width))
    for py in range(cam.height):
        for px in range(cam.width):
            t = 1.0
            color = np.zeros(3)
            for center, cov2d, opa, c in splats:
                if t < TRANSMITTANCE_FLOOR:
                    break
                a = min(
                    ALPHA_CLAMP,
                    opa * gaussian_weight(np.array([px, py]) - center, cov2d),
                )
                if a < ALPHA_SKIP:
                    continue
                color = color + c * (a * t)
                t *= 1.0 - a
            image[py, px] = color + bg * t
            alpha_out[py, px] = 1.0 - t
    return RenderOutput(image=image, alpha=alpha_out)
