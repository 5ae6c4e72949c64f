"""Scene initialization, the optimization loop, and image metrics.

One training step renders the N in-exposure poses of a view, averages them
into a predicted blurry frame for the L1 + D-SSIM term, estimates signed
event counts between a randomly drawn frame pair for the event term, and
backpropagates the combined loss through the rasterizer's analytic
adjoint.  Each parameter group has its own Adam state and learning rate;
positions decay exponentially, everything else is constant.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import TrainingDivergedError
from .events import EventStream, accumulate_bin_image, bin_events
from .gaussians import Camera, Scene, save_scene
from .losses import (
    LUMA_WEIGHTS,
    LossBreakdown,
    LossWeights,
    blur_loss_backward,
    dssim,
    estimate_event_bin,
    event_loss,
    event_loss_backward,
    ssim,
    to_grayscale,
    total_loss,
)
from .rasterizer import render, render_backward

LOG_HEADER = "iter,l1,dssim,blur,event,total"


@dataclass(frozen=True)
class LearningRates:
    """Per-group Adam step sizes (inherited splatting defaults).

    The position rate is additionally scaled by the scene extent and
    decayed exponentially toward ``position_final`` over the run.
    """

    position: float = 1.6e-4
    position_final: float = 1.6e-6
    color: float = 2.5e-3
    opacity: float = 5e-2
    scale: float = 5e-3
    rotation: float = 1e-3

    def __post_init__(self) -> None:
        for name in ("position", "position_final", "color", "opacity",
                     "scale", "rotation"):
            if getattr(self, name) < 0:
                raise ValueError(f"learning rate {name} must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 30000
    weights: LossWeights = field(default_factory=LossWeights)
    lrs: LearningRates = field(default_factory=LearningRates)
    seed: int = 0
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    deterministic: bool = False
    threads: int = 1
    checkpoint_interval: int = 1000
    densify_interval: int = 100
    event_pairs: int = 1
    scene_extent: float | None = None

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.event_pairs < 1:
            raise ValueError("event_pairs must be >= 1")

    @property
    def effective_threads(self) -> int:
        return 1 if self.deterministic else max(1, self.threads)


@dataclass
class View:
    """One training view: blurry frame, in-exposure poses, event stream."""

    blurry: np.ndarray
    exposure: tuple[float, float]
    poses: list[Camera]
    stream: EventStream
    name: str = "view"
    sharp: np.ndarray | None = None  # (N, H, W, 3) ground-truth latents
    _bin_prefix: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.blurry = np.asarray(self.blurry, dtype=np.float64)
        if self.blurry.ndim != 3 or self.blurry.shape[2] != 3:
            raise ValueError(
                f"blurry image must be (H, W, 3), got {self.blurry.shape}"
            )
        t0, t1 = self.exposure
        if not (self.stream.t_start == t0 and self.stream.t_end == t1):
            raise ValueError(
                f"view {self.name}: event window ({self.stream.t_start}, "
                f"{self.stream.t_end}] does not match exposure ({t0}, {t1}]"
            )

    @property
    def height(self) -> int:
        return self.blurry.shape[0]

    @property
    def width(self) -> int:
        return self.blurry.shape[1]

    def bin_image(self, a: int, b: int, n: int) -> np.ndarray:
        """Signed event counts between latent instants a and b (0-based, a < b)."""
        if n not in self._bin_prefix:
            bins = bin_events(self.stream, n)
            prefix = np.zeros((n, self.height, self.width), dtype=np.int64)
            for i, ebin in enumerate(bins):
                img = accumulate_bin_image(
                    ebin, ebin.interval, self.width, self.height
                )
                prefix[i + 1] = prefix[i] + img.counts
            self._bin_prefix[n] = prefix
        prefix = self._bin_prefix[n]
        return prefix[b] - prefix[a]


class Adam:
    """Per-array Adam with the splatting-default epsilon."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-15) -> None:
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._state: dict = {}

    def update(self, key: str, param: np.ndarray, grad: np.ndarray,
               lr: float) -> None:
        """Apply one step in place; a zero rate leaves the group untouched."""
        if lr == 0.0:
            return
        if key not in self._state:
            self._state[key] = [np.zeros_like(param), np.zeros_like(param), 0]
        m, v, t = self._state[key]
        t += 1
        m *= self.beta1
        m += (1 - self.beta1) * grad
        v *= self.beta2
        v += (1 - self.beta2) * grad * grad
        m_hat = m / (1 - self.beta1 ** t)
        v_hat = v / (1 - self.beta2 ** t)
        param -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self._state[key][2] = t


def camera_extent(views) -> float:
    """Radius of the camera-center bounding sphere, the position-lr scale."""
    centers = np.array(
        [pose.center() for view in views for pose in view.poses]
    )
    if len(centers) == 0:
        return 1.0
    radius = float(np.max(np.linalg.norm(centers - centers.mean(axis=0), axis=1)))
    if radius < 1e-9:
        return 1.0
    return 1.1 * radius


def init_scene_from_points(
    points: np.ndarray,
    colors: np.ndarray | None = None,
    seed: int = 0,
) -> Scene:
    """One mid-gray isotropic splat per input point.

    Scale is the log of the mean distance to the 3 nearest neighbors
    (0.1 scene units for a single point); opacity starts at 0.1.  ``seed``
    is reserved for stochastic initializers and currently unused.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if n == 0:
        raise ValueError("cannot initialize a scene from an empty point list")
    if n == 1:
        dists = np.array([0.1])
    else:
        k = min(3, n - 1)
        d, _ = cKDTree(points).query(points, k=k + 1)
        dists = d[:, 1:].mean(axis=1)
    log_s = np.log(np.maximum(dists, 1e-8))
    if colors is None:
        colors = np.full((n, 3), 0.5)
    else:
        colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        if len(colors) != n:
            raise ValueError(f"{n} points but {len(colors)} colors")
    return Scene(
        means=points.copy(),
        quats=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        log_scales=np.repeat(log_s[:, None], 3, axis=1),
        opacity_logits=np.full(n, float(np.log(0.1 / 0.9))),
        colors=colors.copy(),
    )


class Trainer:
    """Owns the scene, the per-group Adam states, and the iteration count.

    ``densify_hook``, invoked every ``config.densify_interval`` iterations
    with the trainer as argument, is the extension point for adaptive
    density control; the default is a no-op.
    """

    def __init__(self, scene: Scene, config: TrainConfig, views=None) -> None:
        self.scene = scene
        self.config = config
        self.adam = Adam()
        self.iteration = 0
        self.densify_hook = None
        if config.scene_extent is not None:
            self.extent = config.scene_extent
        elif views:
            self.extent = camera_extent(views)
        else:
            self.extent = 1.0

    def position_lr(self) -> float:
        lrs = self.config.lrs
        if lrs.position == 0.0:
            return 0.0
        horizon = max(1, self.config.iterations)
        frac = min(self.iteration, horizon) / horizon
        decay = (lrs.position_final / lrs.position) ** frac
        return lrs.position * decay * self.extent

    def _map(self, fn, items):
        if self.config.effective_threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.config.effective_threads) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    def step(self, view: View, rng: np.random.Generator) -> LossBreakdown:
        cfg = self.config
        wts = cfg.weights
        n = wts.n
        if len(view.poses) != n:
            raise ValueError(
                f"view {view.name} has {len(view.poses)} poses, config wants {n}"
            )

        rendered = self._map(
            lambda cam: render(self.scene, cam, cfg.background, with_cache=True),
            view.poses,
        )
        imgs = [out.image for out, _ in rendered]
        caches = [cache for _, cache in rendered]

        blur = np.mean(imgs, axis=0)
        l1 = float(np.mean(np.abs(blur - view.blurry)))
        dssim_val = dssim(blur, view.blurry)

        upstream = blur_loss_backward(blur, view.blurry, wts.w_dssim) / n
        upstreams = [upstream.copy() for _ in range(n)]

        ev_val = 0.0
        if wts.w_event > 0.0:
            pairs = list(combinations(range(n), 2))
            pair_scale = wts.w_event / cfg.event_pairs
            for _ in range(cfg.event_pairs):
                a, b = pairs[int(rng.integers(len(pairs)))]
                gt = view.bin_image(a, b, n)
                gray_a = to_grayscale(imgs[a])
                gray_b = to_grayscale(imgs[b])
                ev_val += event_loss(
                    estimate_event_bin(gray_a, gray_b, wts.thresholds), gt
                )
                d_ga, d_gb = event_loss_backward(
                    gray_a, gray_b, gt, wts.thresholds
                )
                upstreams[a] += pair_scale * d_ga[:, :, None] * LUMA_WEIGHTS
                upstreams[b] += pair_scale * d_gb[:, :, None] * LUMA_WEIGHTS
            ev_val /= cfg.event_pairs

        breakdown = total_loss(l1, dssim_val, ev_val, wts)
        if not np.isfinite(breakdown.total):
            raise TrainingDivergedError(
                f"non-finite loss at iteration {self.iteration}"
            )

        grad_list = self._map(
            lambda i: render_backward(
                self.scene, view.poses[i], cfg.background, upstreams[i],
                cache=caches[i],
            ),
            list(range(n)),
        )
        grads = grad_list[0]
        for g in grad_list[1:]:
            grads.add_(g)

        lrs = cfg.lrs
        self.adam.update("means", self.scene.means, grads.d_means,
                         self.position_lr())
        self.adam.update("colors", self.scene.colors, grads.d_colors, lrs.color)
        self.adam.update("opacity", self.scene.opacity_logits,
                         grads.d_opacity_logits, lrs.opacity)
        self.adam.update("scales", self.scene.log_scales,
                         grads.d_log_scales, lrs.scale)
        self.adam.update("quats", self.scene.quats, grads.d_quats, lrs.rotation)

        self.iteration += 1
        return breakdown

    def train(self, views, log_path=None, checkpoint_dir=None) -> Scene:
        if not views:
            raise ValueError("cannot train on an empty dataset")
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        log_fh = open(log_path, "w") if log_path else None
        if log_fh:
            log_fh.write(LOG_HEADER + "\n")
        if checkpoint_dir is not None:
            checkpoint_dir = Path(checkpoint_dir)
            checkpoint_dir.mkdir(parents=True, exist_ok=True)
        try:
            for _ in range(cfg.iterations):
                view = views[int(rng.integers(len(views)))]
                bd = self.step(view, rng)
                if log_fh:
                    log_fh.write(
                        f"{self.iteration},{bd.l1!r},{bd.dssim!r},"
                        f"{bd.blur_loss!r},{bd.event_loss!r},{bd.total!r}\n"
                    )
                if (
                    checkpoint_dir is not None
                    and self.iteration % cfg.checkpoint_interval == 0
                ):
                    save_scene(
                        checkpoint_dir / f"scene_{self.iteration:06d}.txt",
                        self.scene,
                    )
                    if log_fh:
                        log_fh.flush()
                if (
                    self.densify_hook is not None
                    and self.iteration % cfg.densify_interval == 0
                ):
                    self.densify_hook(self)
        finally:
            if log_fh:
                log_fh.close()
        return self.scene


def train_step(
    scene: Scene,
    view: View,
    config: TrainConfig,
    rng: np.random.Generator,
    trainer: Trainer | None = None,
):
    """One optimization step; pass a Trainer to keep Adam state across calls.

    The scene is updated in place and also returned.
    """
    if trainer is None:
        trainer = Trainer(scene, config, views=[view])
    breakdown = trainer.step(view, rng)
    return trainer.scene, breakdown


def train(views, config: TrainConfig, scene: Scene,
          log_path=None, checkpoint_dir=None) -> Scene:
    """Run the full loop over uniformly sampled views; returns the scene."""
    trainer = Trainer(scene, config, views=views)
    return trainer.train(views, log_path=log_path, checkpoint_dir=checkpoint_dir)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on [0, 1] images, capped at 100."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return 100.0
    return -10.0 * float(np.log10(mse))


def ssim_metric(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity, reported directly (not the D-SSIM transform)."""
    return ssim(a, b)
