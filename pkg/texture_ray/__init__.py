from texture_ray.callback import CheckpointCallback, LoggingCallback, TrainingCallback
from texture_ray.dataset import (
    ClassLabel,
    Dataset,
    DatasetIngestionError,
    LabelValidationError,
    TextureSample,
    export_dataset,
    load_dataset,
    load_label_map,
    split_checksum,
    stratified_split,
)
from texture_ray.evaluation import (
    ComparisonReport,
    average_accuracy,
    best_iteration,
    compare_runs,
    confusion_matrix,
    overall_accuracy,
    per_class_accuracy,
    summarize_seeds,
)
from texture_ray.experiment import run_comparison, run_seeds
from texture_ray.main import (
    EpochMetrics,
    RunReport,
    TrainConfig,
    TrainingDivergedError,
    evaluate,
    train,
)
from texture_ray.model import (
    ClassifierSpec,
    PretrainedWeightsUnavailable,
    build_classifier,
    forward,
    load_classifier,
    predict,
    save_classifier,
)
from texture_ray.synthetic import generate_synthetic_textures
from texture_ray.transforms import (
    AugmentConfig,
    augment,
    expand_dataset,
    normalize_for_backbone,
    patch_and_shuffle,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ClassLabel",
    "TextureSample",
    "Dataset",
    "DatasetIngestionError",
    "LabelValidationError",
    "load_label_map",
    "load_dataset",
    "stratified_split",
    "split_checksum",
    "export_dataset",
    "generate_synthetic_textures",
    "AugmentConfig",
    "patch_and_shuffle",
    "augment",
    "expand_dataset",
    "normalize_for_backbone",
    "ClassifierSpec",
    "PretrainedWeightsUnavailable",
    "build_classifier",
    "forward",
    "predict",
    "save_classifier",
    "load_classifier",
    "TrainConfig",
    "EpochMetrics",
    "RunReport",
    "TrainingDivergedError",
    "train",
    "evaluate",
    "TrainingCallback",
    "LoggingCallback",
    "CheckpointCallback",
    "confusion_matrix",
    "overall_accuracy",
    "per_class_accuracy",
    "best_iteration",
    "average_accuracy",
    "compare_runs",
    "ComparisonReport",
    "summarize_seeds",
    "run_comparison",
    "run_seeds",
]
