"""Feature-space conditional diffusion augmentation for imbalanced regression.

Train a v-parameterized denoiser on (feature, target) pairs, allocate a
synthetic budget across target bins by error and scarcity, gate candidates
by per-bin Mahalanobis distance, and retrain the regression head on the
mixed data. See the CLI (`latentdiff run-all`) for the end-to-end loop.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, parse_config, serialize_config
from .data import (
    BinSpec,
    LabeledFeatureSet,
    ShotPartition,
    Standardizer,
    bin_counts,
    bin_index,
    bin_indices,
    load_csv,
    make_imbalanced_synthetic,
    save_csv,
    shot_partition,
    standardize_fit_transform,
)
from .diffusion import (
    DenoiserModel,
    DiffusionTrainConfig,
    NoiseSchedule,
    build_schedule,
    forward_sample,
    recover_z0,
    reverse_sample,
    train_diffusion,
    velocity_target,
)
from .generation import (
    AllocationPlan,
    PriorityState,
    QualityGate,
    allocate_budget,
    compute_priorities,
    fit_gate,
    gate_filter,
    generate_augmentation,
    priority_scores,
    track_errors,
)
from .metrics import MetricsReport, compare_reports, compute_metrics
from .pipeline import (
    MixSchedule,
    RegressorModel,
    extract_features,
    run_pipeline,
    train_head_augmented,
    train_vanilla,
)

__all__ = [
    "AllocationPlan",
    "BinSpec",
    "DenoiserModel",
    "DiffusionTrainConfig",
    "LabeledFeatureSet",
    "MetricsReport",
    "MixSchedule",
    "NoiseSchedule",
    "PipelineConfig",
    "PriorityState",
    "QualityGate",
    "RegressorModel",
    "ShotPartition",
    "Standardizer",
    "allocate_budget",
    "bin_counts",
    "bin_index",
    "bin_indices",
    "build_schedule",
    "compare_reports",
    "compute_metrics",
    "compute_priorities",
    "extract_features",
    "fit_gate",
    "forward_sample",
    "gate_filter",
    "generate_augmentation",
    "load_csv",
    "make_imbalanced_synthetic",
    "parse_config",
    "priority_scores",
    "recover_z0",
    "reverse_sample",
    "run_pipeline",
    "save_csv",
    "serialize_config",
    "shot_partition",
    "standardize_fit_transform",
    "track_errors",
    "train_diffusion",
    "train_head_augmented",
    "train_vanilla",
    "velocity_target",
]
