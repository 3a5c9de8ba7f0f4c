from .ops import (
    AttentionParams,
    adaptive_fuse,
    adaptive_fuse_backward,
    cross_attention,
    cross_attention_backward,
    identity_projection,
    project_fused,
    project_fused_backward,
    rms_norm,
    rms_norm_backward,
)
from .schedule import NoiseSchedule, corrupt_latent
from .losses import (
    FeatureExtractor,
    IdentityFeature,
    crop_text_regions,
    loss_cd,
    loss_cd_backward,
    loss_text,
    loss_text_backward,
    total_loss,
)
from .training import (
    FusionConfig,
    FusionLayer,
    ToyModel,
    ToyTask,
    TrainingDiverged,
    TrainingTrace,
    fusion_stack_backward,
    fusion_stack_forward,
    toy_train,
)

__all__ = [
    "AttentionParams",
    "FeatureExtractor",
    "FusionConfig",
    "FusionLayer",
    "IdentityFeature",
    "NoiseSchedule",
    "ToyModel",
    "ToyTask",
    "TrainingDiverged",
    "TrainingTrace",
    "adaptive_fuse",
    "adaptive_fuse_backward",
    "corrupt_latent",
    "crop_text_regions",
    "cross_attention",
    "cross_attention_backward",
    "fusion_stack_backward",
    "fusion_stack_forward",
    "identity_projection",
    "loss_cd",
    "loss_cd_backward",
    "loss_text",
    "loss_text_backward",
    "project_fused",
    "project_fused_backward",
    "rms_norm",
    "rms_norm_backward",
    "total_loss",
    "toy_train",
]
