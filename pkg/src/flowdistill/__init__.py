"""Flow-distillation depth losses on synthetic rectified-stereo scenes."""

__version__ = "0.1.0"

from .core import (
    CameraRig,
    DataError,
    DegenerateFlowError,
    DimensionError,
    DomainError,
    EmptyMaskError,
    FlowDistillError,
    FormatError,
    ShapeError,
    raster_map2,
    raster_new,
    read_pfm,
    reduce_masked_mean,
    write_pfm,
    write_pgm,
)
from .warping import PaddingMode, depth_from_flow, flow_from_depth, inverse_warp, warp_gradient_depth
from .losses import (
    DepthActivation,
    LossConfig,
    MaskConfig,
    auto_mask,
    depth_regression_loss,
    final_loss,
    flow_distillation_loss,
    flow_guided_photometric_loss,
    photometric_error,
    photometric_loss,
    prior_flow_mask,
    sigma_to_depth,
    ssim,
)
from .scene import RenderedScene, SceneSpec, load_scene, render, save_scene, stress_scene
from .optim import (
    AdamConfig,
    EvalReport,
    LossKind,
    Settings,
    count_local_minima,
    evaluate,
    grad_check,
    optimize_depth,
    sweep_landscape,
)
from .estimator import DepthFieldRegressor, PriorFlowMasker

__all__ = [name for name in dir() if not name.startswith("_")]
