"""PSNR/SSIM evaluation of a scene against a dataset's ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ModeUnavailableError
from .gaussians import Scene
from .rasterizer import render
from .trainer import psnr, ssim_metric

MODES = ("deblur", "novel-view")


def mid_exposure_index(n: int) -> int:
    """0-based index of the mid-exposure latent (1-based ceil(N/2))."""
    return math.ceil(n / 2) - 1


@dataclass
class EvalRow:
    name: str
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    mode: str
    rows: list

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows]))

    def to_csv(self) -> str:
        lines = ["view,psnr,ssim"]
        for r in self.rows:
            lines.append(f"{r.name},{r.psnr!r},{r.ssim!r}")
        lines.append(f"mean,{self.mean_psnr!r},{self.mean_ssim!r}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        width = max([len("view")] + [len(r.name) for r in self.rows])
        lines = [f"{'view':<{width}}  {'psnr':>8}  {'ssim':>7}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.psnr:8.3f}  {r.ssim:7.4f}")
        lines.append(
            f"{'mean':<{width}}  {self.mean_psnr:8.3f}  {self.mean_ssim:7.4f}"
        )
        return "\n".join(lines)


def evaluate(
    scene: Scene,
    dataset: Dataset,
    mode: str,
    background=(0.0, 0.0, 0.0),
) -> EvalReport:
    """Render either the mid-exposure training poses (``deblur``) or the
    held-out poses (``novel-view``) and score them against ground truth."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")

    rows = []
    if mode == "deblur":
        mid = mid_exposure_index(dataset.n_latents)
        for view in dataset.views:
            if view.sharp is None:
                raise ModeUnavailableError(
                    f"view {view.name!r} has no sharp ground truth; "
                    "deblur evaluation unavailable"
                )
            img = np.clip(
                render(scene, view.poses[mid], background).image, 0.0, 1.0
            )
            truth = view.sharp[mid]
            rows.append(
                EvalRow(view.name, psnr(img, truth), ssim_metric(img, truth))
            )
    else:
        if not dataset.test_views:
            raise ModeUnavailableError(
                "dataset has no held-out test views; "
                "novel-view evaluation unavailable"
            )
        for tv in dataset.test_views:
            if tv.sharp is None:
                raise ModeUnavailableError(
                    f"test view {tv.name!r} has no sharp ground truth; "
                    "novel-view evaluation unavailable"
                )
            img = np.clip(render(scene, tv.camera, background).image, 0.0, 1.0)
            rows.append(
                EvalRow(tv.name, psnr(img, tv.sharp), ssim_metric(img, tv.sharp))
            )
    return EvalReport(mode=mode, rows=rows)
