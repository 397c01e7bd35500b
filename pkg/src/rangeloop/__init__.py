"""Range-image restoration and place recognition under adverse weather."""

from .config import DataConfig, ExperimentConfig, load_config, save_config
from .corruption import CorruptionParams, corrupt
from .dataset import ScanSet, image_to_tensor, load_scan_set, tensor_to_image
from .errors import ConfigurationError, DataError, NumericError, RangeloopError
from .evaluation import (
    LoopCriterion,
    RetrievalResult,
    f1_score,
    fss,
    recall_at_n,
    recall_at_percent,
    retrieve,
    similarity_matrix,
    ssim,
)
from .losses import ldr_loss, ltd_loss, rec_loss, triplet_loss
from .nets import (
    DescriptorConfig,
    DescriptorNet,
    RestorationConfig,
    RestorationNet,
    load_checkpoint,
    parameter_hash,
    save_checkpoint,
)
from .pairing import Pose, find_aligned_pairs, load_poses, reproject_scan, save_poses
from .pipeline import run_evaluation
from .range_image import (
    ProjectionConfig,
    RangeImage,
    load_cloud,
    project,
    save_cloud,
    unproject,
)
from .trainer import TrainConfig, cosine_lr, lambda_schedule, schedule_plan, train

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "CorruptionParams",
    "DataConfig",
    "DataError",
    "DescriptorConfig",
    "DescriptorNet",
    "ExperimentConfig",
    "LoopCriterion",
    "NumericError",
    "Pose",
    "ProjectionConfig",
    "RangeImage",
    "RangeloopError",
    "RestorationConfig",
    "RestorationNet",
    "RetrievalResult",
    "ScanSet",
    "TrainConfig",
    "corrupt",
    "cosine_lr",
    "f1_score",
    "find_aligned_pairs",
    "fss",
    "image_to_tensor",
    "lambda_schedule",
    "ldr_loss",
    "load_checkpoint",
    "load_cloud",
    "load_config",
    "load_poses",
    "load_scan_set",
    "ltd_loss",
    "parameter_hash",
    "project",
    "rec_loss",
    "recall_at_n",
    "recall_at_percent",
    "reproject_scan",
    "retrieve",
    "run_evaluation",
    "save_checkpoint",
    "save_cloud",
    "save_config",
    "save_poses",
    "schedule_plan",
    "similarity_matrix",
    "ssim",
    "tensor_to_image",
    "train",
    "triplet_loss",
    "unproject",
]
