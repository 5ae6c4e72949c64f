"""Loss terms: blur synthesis, L1 + D-SSIM image loss, event-count
estimation, event MSE, and their weighted combination.

Every loss that feeds the optimizer comes with a hand-written backward
(`*_backward`) returning the gradient with respect to the predicted image;
the rasterizer's adjoint consumes those.  The event-count quantizer uses a
straight-through convention: the forward value is the integer count, the
backward differentiates the unquantized ratio ``(log L_m - log L_n) / C``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .events import LOG_EPS, EventBinImage, Thresholds

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

# BT.601 luma weights; a design choice, the sensor model is colorless.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class LossWeights:
    """Loss mixing weights and the latent count they apply to."""

    w_dssim: float = 0.2
    w_event: float = 0.005
    n: int = 5
    thresholds: Thresholds = field(default_factory=Thresholds)

    def __post_init__(self) -> None:
        if not 0.0 <= self.w_dssim <= 1.0:
            raise ValueError(f"w_dssim must lie in [0, 1], got {self.w_dssim}")
        if self.w_event < 0:
            raise ValueError(f"w_event must be >= 0, got {self.w_event}")
        if self.n < 2:
            raise ValueError(f"need at least 2 latents, got n={self.n}")


@dataclass(frozen=True)
class LossBreakdown:
    l1: float
    dssim: float
    blur_loss: float
    event_loss: float
    total: float


def synthesize_blur(images: np.ndarray) -> np.ndarray:
    """Per-pixel mean of the latent renders; the predicted blurry frame."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[0] < 2:
        raise ValueError(
            f"expected a stack of >= 2 images, got shape {images.shape}"
        )
    return images.mean(axis=0)


def to_grayscale(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return image @ LUMA_WEIGHTS


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def gaussian_kernel_1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    g = gaussian_kernel_1d(size, sigma)
    return np.outer(g, g)


def _corr_valid(img: np.ndarray, g1d: np.ndarray) -> np.ndarray:
    """Valid-mode correlation with the separable Gaussian window."""
    half = len(g1d) // 2
    tmp = correlate1d(img, g1d, axis=0, mode="constant")
    tmp = correlate1d(tmp, g1d, axis=1, mode="constant")
    return tmp[half:-half, half:-half]


def _conv_full(img: np.ndarray, g1d: np.ndarray) -> np.ndarray:
    """Full-mode convolution, the adjoint of :func:`_corr_valid`."""
    half = len(g1d) // 2
    padded = np.pad(img, half)
    tmp = correlate1d(padded, g1d, axis=0, mode="constant")
    return correlate1d(tmp, g1d, axis=1, mode="constant")


def _channels(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img[:, :, None]
    return img


def _ssim_terms(a_ch: np.ndarray, b_ch: np.ndarray, kernel: np.ndarray):
    mu_a = _corr_valid(a_ch, kernel)
    mu_b = _corr_valid(b_ch, kernel)
    e_aa = _corr_valid(a_ch * a_ch, kernel)
    e_bb = _corr_valid(b_ch * b_ch, kernel)
    e_ab = _corr_valid(a_ch * b_ch, kernel)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    a1 = 2.0 * mu_a * mu_b + SSIM_C1
    a2 = 2.0 * cov + SSIM_C2
    b1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1
    b2 = var_a + var_b + SSIM_C2
    return mu_a, mu_b, a1, a2, b1, b2


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over valid 11x11 window positions.

    Uses the standard Gaussian window (sigma 1.5) and constants on the
    [0, 1] intensity range; channels are averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValueError(
            f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    kernel = gaussian_kernel_1d()
    total = 0.0
    chans_a, chans_b = _channels(a), _channels(b)
    n_ch = chans_a.shape[2]
    for c in range(n_ch):
        _, _, a1, a2, b1, b2 = _ssim_terms(chans_a[:, :, c], chans_b[:, :, c], kernel)
        total += float(np.mean(a1 * a2 / (b1 * b2)))
    return total / n_ch


def ssim_backward(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient of ``ssim(a, b)`` with respect to ``a``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    kernel = gaussian_kernel_1d()
    chans_a, chans_b = _channels(a), _channels(b)
    n_ch = chans_a.shape[2]
    grad = np.zeros_like(chans_a)
    for c in range(n_ch):
        ac, bc = chans_a[:, :, c], chans_b[:, :, c]
        mu_a, mu_b, a1, a2, b1, b2 = _ssim_terms(ac, bc, kernel)
        s_map = a1 * a2 / (b1 * b2)
        scale = 1.0 / (s_map.size * n_ch)
        # Partials of the SSIM map with respect to the window statistics
        # (mu_a, E[a^2], E[ab]); the variance terms enter through those.
        d_mu_a = scale * (
            2.0 * mu_b * (a2 - a1) / (b1 * b2)
            - 2.0 * mu_a * s_map * (1.0 / b1 - 1.0 / b2)
        )
        d_eaa = scale * (-s_map / b2)
        d_eab = scale * (2.0 * a1 / (b1 * b2))
        # Adjoint of the valid correlation is a full convolution with the
        # same (symmetric) kernel.
        grad[:, :, c] = (
            _conv_full(d_mu_a, kernel)
            + 2.0 * ac * _conv_full(d_eaa, kernel)
            + bc * _conv_full(d_eab, kernel)
        )
    return grad.reshape(a.shape)


def dssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural dissimilarity (1 - SSIM) / 2, in [0, 1]."""
    return (1.0 - ssim(a, b)) / 2.0


def dssim_backward(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return -0.5 * ssim_backward(a, b)


def blur_loss(pred: np.ndarray, target: np.ndarray, w_dssim: float) -> float:
    """(1 - w) * mean L1 + w * D-SSIM between predicted and observed blur."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_same_shape(pred, target)
    l1 = float(np.mean(np.abs(pred - target)))
    return (1.0 - w_dssim) * l1 + w_dssim * dssim(pred, target)


def blur_loss_backward(
    pred: np.ndarray, target: np.ndarray, w_dssim: float
) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_same_shape(pred, target)
    g = (1.0 - w_dssim) * np.sign(pred - target) / pred.size
    if w_dssim != 0.0:
        g = g + w_dssim * dssim_backward(pred, target)
    return g


def _log_diff(l_n: np.ndarray, l_m: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(l_m, LOG_EPS)) - np.log(np.maximum(l_n, LOG_EPS))


def event_bin_surrogate(
    l_n: np.ndarray, l_m: np.ndarray, thresholds: Thresholds
) -> np.ndarray:
    """The unquantized count ratio d / C that the backward pass differentiates."""
    l_n = np.asarray(l_n, dtype=np.float64)
    l_m = np.asarray(l_m, dtype=np.float64)
    _check_same_shape(l_n, l_m)
    d = _log_diff(l_n, l_m)
    return np.where(l_m > l_n, d / thresholds.c_pos, d / thresholds.c_neg)


def estimate_event_bin(
    l_n: np.ndarray, l_m: np.ndarray, thresholds: Thresholds
) -> np.ndarray:
    """Signed event-count estimate between two intensity images.

    The log difference is divided by the positive threshold where the
    image brightened and by the negative threshold where it darkened, then
    truncated toward zero (floor of a positive ratio, ceil of a negative
    one).  Gradient contract: treat the truncation as identity, i.e.
    differentiate :func:`event_bin_surrogate` instead.
    """
    l_n = np.asarray(l_n, dtype=np.float64)
    l_m = np.asarray(l_m, dtype=np.float64)
    _check_same_shape(l_n, l_m)
    d = _log_diff(l_n, l_m)
    return np.where(
        l_m > l_n,
        np.floor(d / thresholds.c_pos),
        np.ceil(d / thresholds.c_neg),
    )


def event_loss(
    estimated: np.ndarray, ground_truth: EventBinImage | np.ndarray
) -> float:
    """Mean squared error between estimated and observed signed counts."""
    gt = (
        ground_truth.counts
        if isinstance(ground_truth, EventBinImage)
        else np.asarray(ground_truth)
    )
    estimated = np.asarray(estimated, dtype=np.float64)
    _check_same_shape(estimated, gt)
    diff = estimated - gt
    return float(np.mean(diff * diff))


def event_loss_backward(
    l_n: np.ndarray,
    l_m: np.ndarray,
    ground_truth: EventBinImage | np.ndarray,
    thresholds: Thresholds,
):
    """Straight-through gradient of the event MSE w.r.t. both intensity images.

    Matches finite differences of the unquantized surrogate path exactly:
    the residual uses d / C rather than its truncation, and the log floor
    blocks gradient where an image sits at or below it.
    """
    gt = (
        ground_truth.counts
        if isinstance(ground_truth, EventBinImage)
        else np.asarray(ground_truth)
    )
    l_n = np.asarray(l_n, dtype=np.float64)
    l_m = np.asarray(l_m, dtype=np.float64)
    _check_same_shape(l_n, l_m)
    _check_same_shape(l_n, gt)
    surrogate = event_bin_surrogate(l_n, l_m, thresholds)
    d_res = 2.0 * (surrogate - gt) / surrogate.size
    inv_c = np.where(l_m > l_n, 1.0 / thresholds.c_pos, 1.0 / thresholds.c_neg)
    d_d = d_res * inv_c
    d_lm = np.where(l_m > LOG_EPS, d_d / np.maximum(l_m, LOG_EPS), 0.0)
    d_ln = np.where(l_n > LOG_EPS, -d_d / np.maximum(l_n, LOG_EPS), 0.0)
    return d_ln, d_lm


def total_loss(
    l1: float, dssim_value: float, event_value: float, weights: LossWeights
) -> LossBreakdown:
    """Combine the components into the training objective."""
    blur = (1.0 - weights.w_dssim) * l1 + weights.w_dssim * dssim_value
    return LossBreakdown(
        l1=float(l1),
        dssim=float(dssim_value),
        blur_loss=float(blur),
        event_loss=float(event_value),
        total=float(blur + weights.w_event * event_value),
    )
