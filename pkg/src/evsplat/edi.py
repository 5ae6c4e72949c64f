"""Double-integral deblurring: recover sharp frames from one blurry image
plus the events recorded during its exposure.

The blurry image is modeled as the average of N latent sharp images at
equally spaced instants.  Events give, per pixel, the multiplicative
brightness factor between consecutive instants, which pins down every
latent up to the shared scale that the average fixes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventStream, Thresholds, bin_events, bin_timestamps


@dataclass
class LatentSet:
    """N sharp intensity images spanning one exposure window."""

    images: np.ndarray      # (N, H, W, 3), clamped to [0, 1] unless asked not to
    timestamps: np.ndarray  # (N,)


def exposure_factors(
    stream: EventStream,
    n: int,
    thresholds: Thresholds,
    height: int,
    width: int,
) -> np.ndarray:
    """Per-pixel multiplicative brightness factors at the n instants.

    The first factor image is identically 1; each later one multiplies in
    exp(c_pos * #positive - c_neg * #negative) over the preceding bin.
    """
    factors = np.ones((n, height, width), dtype=np.float64)
    log_acc = np.zeros((height, width), dtype=np.float64)
    for i, b in enumerate(bin_events(stream, n)):
        if len(b):
            step = np.zeros((height, width), dtype=np.float64)
            signed = np.where(b.ps > 0, thresholds.c_pos, -thresholds.c_neg)
            np.add.at(step, (b.ys, b.xs), signed)
            log_acc = log_acc + step
        factors[i + 1] = np.exp(log_acc)
    return factors


def reconstruct_latents(
    blurry: np.ndarray,
    stream: EventStream,
    n: int,
    thresholds: Thresholds,
    clamp: bool = True,
) -> LatentSet:
    """Solve for the n latent sharp images behind one blurry frame.

    The luminance-derived factor is applied identically to all three
    channels (events carry no color).  The mean of the unclamped latents
    reproduces the blurry input exactly; clamping to [0, 1] happens last
    and can be disabled for analysis.
    """
    blurry = np.asarray(blurry, dtype=np.float64)
    if blurry.ndim != 3 or blurry.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {blurry.shape}")
    height, width = blurry.shape[:2]
    factors = exposure_factors(stream, n, thresholds, height, width)
    denom = factors.sum(axis=0)
    first = n * blurry / denom[..., None]
    images = first[None, ...] * factors[..., None]
    if clamp:
        images = np.clip(images, 0.0, 1.0)
    return LatentSet(
        images=images,
        timestamps=bin_timestamps(stream.t_start, stream.t_end, n),
    )
