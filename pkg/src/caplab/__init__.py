"""Desk-scale lab for enhancing JPEG-compressed low-light photographs.

Three pillars: a quantization-only JPEG surrogate with luminance-binned
loss analysis, a U-shaped network whose bottleneck attention ignores
near-black regions, and a two-stage training pipeline (compression
restoration, then brightness enhancement) with deterministic
checkpointing and evaluation.
"""

from .errors import (
    CaplabError,
    IngestionError,
    InternalConsistencyError,
    InvalidConfigError,
    InvalidInputError,
    ModelBuildError,
    NumericError,
)
from .imaging import (
    LUMA_WEIGHTS,
    MetricRecord,
    brightness_map,
    charbonnier,
    load_image,
    psnr,
    save_image,
    ssim,
    threshold_mask,
    to_grayscale,
)
from .model import (
    BGViTBlock,
    BrightnessGuidedAttention,
    BrightnessGuidedUNet,
    ModelConfig,
    bgsa,
    build_model,
    param_count,
    pool_mask_to_tokens,
)
from .training import (
    Checkpoint,
    EvalReport,
    GradCheckReport,
    TrainConfig,
    charbonnier_loss,
    evaluate,
    evaluate_pairs,
    finetune,
    grad_check,
    load_checkpoint,
    pretrain,
    save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "BGViTBlock",
    "BrightnessGuidedAttention",
    "BrightnessGuidedUNet",
    "CaplabError",
    "Checkpoint",
    "EvalReport",
    "GradCheckReport",
    "IngestionError",
    "InternalConsistencyError",
    "InvalidConfigError",
    "InvalidInputError",
    "LUMA_WEIGHTS",
    "MetricRecord",
    "ModelBuildError",
    "ModelConfig",
    "NumericError",
    "TrainConfig",
    "bgsa",
    "brightness_map",
    "build_model",
    "charbonnier",
    "charbonnier_loss",
    "evaluate",
    "evaluate_pairs",
    "finetune",
    "grad_check",
    "load_checkpoint",
    "load_image",
    "param_count",
    "pool_mask_to_tokens",
    "pretrain",
    "psnr",
    "save_checkpoint",
    "save_image",
    "ssim",
    "threshold_mask",
    "to_grayscale",
    "__version__",
]
