"""Part-aware 3D Gaussian splatting optimizer: occlusion-ordered block
planning, differentiable color/probability rendering, score-distillation
optimization with frozen-kernel masking, and between-block kernel extension
with label-based pruning."""

from .scene import (  # noqa: F401
    GaussianKernel,
    Mark,
    Scene,
    covariance,
    freeze,
    random_ball_scene,
    scene_equal,
    scene_hash,
    unfreeze,
)
from .ply import load_ply, save_ply  # noqa: F401
from .camera import CameraConfig, CameraView, Projected2D, project, sample_view, view_prompt  # noqa: F401
from .rasterizer import (  # noqa: F401
    ParamGradients,
    RenderOptions,
    RenderOutput,
    backward,
    render,
    render_brute_force,
    render_silhouette,
)
from .guidance import (  # noqa: F401
    EchoProvider,
    GuidanceRequest,
    GuidanceResponse,
    NoiseSchedule,
    PhotometricOracle,
    add_noise,
    combined_loss_gradient,
    sds_gradient,
)
from .segmentation import SegmentationConfig, SyntheticMaskOracle, segment_part  # noqa: F401
from .extend import ExtensionConfig, extend, label_eliminate  # noqa: F401
from .planner import Block, PartSpec, Plan, inversions, layer, synthesize_plan, validate  # noqa: F401
from .pipeline import GroupOptimizer, OptimizerConfig, resume, run  # noqa: F401
from .config import RunConfig, load_run_config, resolve_config  # noqa: F401

__version__ = "0.1.0"
