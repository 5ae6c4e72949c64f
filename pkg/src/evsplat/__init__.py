"""Event-assisted deblurring and novel view synthesis with Gaussian splatting.

The pipeline: an ideal event-camera simulator and exposure-window binning
(:mod:`~evsplat.events`), double-integral deblurring (:mod:`~evsplat.edi`),
a differentiable CPU splat rasterizer with an analytic backward pass
(:mod:`~evsplat.rasterizer`), blur and event losses
(:mod:`~evsplat.losses`), the training loop (:mod:`~evsplat.trainer`), and
a synthetic dataset generator plus CLI (:mod:`~evsplat.synthetic`,
:mod:`~evsplat.cli`).
"""

from .edi import LatentSet, exposure_factors, reconstruct_latents
from .errors import (
    EvsplatError,
    InvalidSceneError,
    InvalidSpecError,
    MalformedStreamError,
    ManifestError,
    ModeUnavailableError,
    TrainingDivergedError,
)
from .events import (
    LOG_EPS,
    Event,
    EventBin,
    EventBinImage,
    EventStream,
    Thresholds,
    accumulate_bin_image,
    bin_events,
    bin_timestamps,
    read_event_file,
    simulate_events,
    write_event_file,
)
from .gaussians import (
    Camera,
    Gaussian3D,
    Scene,
    covariance_3d,
    gaussian_weight,
    load_scene,
    project_covariance,
    save_scene,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    blur_loss,
    dssim,
    estimate_event_bin,
    event_bin_surrogate,
    event_loss,
    ssim,
    synthesize_blur,
    to_grayscale,
    total_loss,
)
from .rasterizer import (
    RenderOutput,
    SceneGradients,
    render,
    render_backward,
    render_reference,
)
from .trainer import (
    LearningRates,
    TrainConfig,
    Trainer,
    View,
    init_scene_from_points,
    psnr,
    ssim_metric,
    train,
    train_step,
)
from .dataset import Dataset, TestView, load_dataset
from .evaluation import EvalReport, evaluate
from .synthetic import (
    SyntheticSpec,
    generate_synthetic,
    interpolate_pose,
    look_at,
    make_demo_scene,
    slerp,
)

__version__ = "0.1.0"
