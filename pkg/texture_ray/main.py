import dataclasses
import json
import platform
import time
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import torch
from ray import logger
from ray.util.annotations import PublicAPI
from torch import nn
from torch.utils.data import DataLoader
from torch.utils.data import Dataset as TorchDataset

from texture_ray.callback import CallbackContainer, TrainingCallback
from texture_ray.dataset import ClassLabel, Dataset, describe, split_checksum
from texture_ray.evaluation import (
    confusion_matrix,
    overall_accuracy,
    per_class_accuracy,
    per_class_f1,
    per_class_precision,
)
from texture_ray.model import (
    ClassifierSpec,
    TextureClassifier,
    build_classifier,
    forward,
    labels_from_logits,
    state_checksum,
)
from texture_ray.transforms import (
    DEFAULT_IMAGE_SIZE,
    DEFAULT_PATCH_SIZE,
    AugmentConfig,
    TexturePipeline,
    expand_dataset,
)
from texture_ray.util import ENV, STREAM_ORDER, derive_rng

WEIGHT_DECAY_COUPLED = "coupled_l2"
WEIGHT_DECAY_DECOUPLED = "decoupled"


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes NaN or infinite."""

    pass


@PublicAPI(stability="beta")
@dataclass
class TrainConfig:
    """Parameters of one training run.

    Args:
        epochs: Number of passes over the training set.
        learning_rate: Adam learning rate.
        weight_decay: Weight decay. Applied as classical L2 through
            ``Adam`` unless ``decoupled_weight_decay`` is set.
        patch_size: Patch side length of the shuffle stage, in pixels of
            the backbone input.
        train_fraction: Per-class fraction of samples used for training.
        batch_size: Mini-batch size.
        seed: Base seed for split, initialization, batch order,
            augmentation and shuffling.
        patch_shuffle_enabled: Run the patch-and-shuffle stage. This is
            the only difference between the control and experimental arms.
        image_size: Square backbone input size.
        static_expansion: Materialize ``augment.expansion_factor`` augmented
            copies up front instead of augmenting on the fly.
        decoupled_weight_decay: Use ``AdamW``.
        augment: Augmentation ranges.
        classifier: Classifier architecture.
        verbose: Log progress at INFO level.
    """

    epochs: int = 30
    learning_rate: float = 5e-5
    weight_decay: float = 1e-3
    patch_size: int = DEFAULT_PATCH_SIZE
    train_fraction: float = 0.8
    batch_size: int = 32
    seed: int = 0
    patch_shuffle_enabled: bool = False

    image_size: int = DEFAULT_IMAGE_SIZE
    static_expansion: bool = False
    decoupled_weight_decay: bool = False
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)

    verbose: bool = True

    def __post_init__(self):
        if isinstance(self.augment, dict):
            self.augment = _augment_from_dict(self.augment)
        if isinstance(self.classifier, dict):
            self.classifier = ClassifierSpec(**self.classifier)

        if self.epochs < 1:
            raise ValueError(f"`epochs` must be at least 1, got {self.epochs}.")
        if not self.learning_rate > 0:
            raise ValueError(
                f"`learning_rate` must be positive, got {self.learning_rate}."
            )
        if self.weight_decay < 0:
            raise ValueError(
                f"`weight_decay` must be non-negative, got {self.weight_decay}."
            )
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError(
                f"`train_fraction` must be in (0, 1], got {self.train_fraction}."
            )
        if self.batch_size < 1:
            raise ValueError(
                f"`batch_size` must be at least 1, got {self.batch_size}."
            )
        if self.seed < 0:
            raise ValueError(f"`seed` must be non-negative, got {self.seed}.")
        if self.image_size < 1:
            raise ValueError(
                f"`image_size` must be at least 1, got {self.image_size}."
            )
        if not 1 <= self.patch_size <= self.image_size:
            raise ValueError(
                f"`patch_size` must be between 1 and `image_size` "
                f"({self.image_size}), got {self.patch_size}."
                "\nFIX THIS by choosing a smaller patch size or a larger "
                "`image_size`."
            )
        if self.patch_shuffle_enabled and self.patch_size == self.image_size:
            warnings.warn(
                f"`patch_size` equals `image_size` ({self.image_size}), so "
                f"patch shuffling leaves every image unchanged."
            )

    @property
    def weight_decay_mode(self) -> str:
        if self.decoupled_weight_decay:
            return WEIGHT_DECAY_DECOUPLED
        return WEIGHT_DECAY_COUPLED

    def train_pipeline(self) -> TexturePipeline:
        return TexturePipeline(
            image_size=self.image_size,
            patch_size=self.patch_size,
            shuffle_enabled=self.patch_shuffle_enabled,
            augment_config=None if self.static_expansion else self.augment,
        )

    def eval_pipeline(self) -> TexturePipeline:
        return self.train_pipeline().without_augmentation()

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        return cls(**data)


def _augment_from_dict(data: Dict[str, Any]) -> AugmentConfig:
    data = dict(data)
    for key in ("zoom_range", "illumination_range"):
        if key in data:
            data[key] = tuple(data[key])
    return AugmentConfig(**data)


def _validate_train_config(config: Union[None, TrainConfig, dict]) -> TrainConfig:
    if config is None:
        config = TrainConfig()
    elif isinstance(config, dict):
        config = TrainConfig.from_dict(config)
    elif not isinstance(config, TrainConfig):
        raise ValueError(
            f"`config` must be a `TrainConfig` instance, a dict, or None, "
            f"but it was {type(config)}."
            f"\nFIX THIS preferably by passing a `TrainConfig` instance."
        )
    return config


def _labels_to_dict(values: Dict[ClassLabel, Any]) -> Dict[str, Any]:
    return {label.label_name: values.get(label) for label in ClassLabel}


def _labels_from_dict(values: Optional[Dict[str, Any]]) -> Dict[ClassLabel, Any]:
    values = values or {}
    return {label: values.get(label.label_name) for label in ClassLabel}


@PublicAPI(stability="beta")
@dataclass
class EpochMetrics:
    """Test metrics after one epoch plus the epoch's training statistics.

    ``train_loss`` is the mean cross-entropy over all training samples of
    the epoch. ``train_accuracy`` is measured on the same forward passes
    (augmentation and dropout active).
    """

    epoch: int
    train_loss: float
    test_overall_accuracy: float
    per_class_accuracy: Dict[ClassLabel, Optional[float]]
    confusion: np.ndarray
    train_accuracy: Optional[float] = None
    per_class_precision: Dict[ClassLabel, Optional[float]] = field(
        default_factory=dict
    )
    per_class_f1: Dict[ClassLabel, Optional[float]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_accuracy": self.train_accuracy,
            "test_overall_accuracy": self.test_overall_accuracy,
            "per_class_accuracy": _labels_to_dict(self.per_class_accuracy),
            "per_class_precision": _labels_to_dict(self.per_class_precision),
            "per_class_f1": _labels_to_dict(self.per_class_f1),
            "confusion": np.asarray(self.confusion).tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EpochMetrics":
        return cls(
            epoch=data["epoch"],
            train_loss=data["train_loss"],
            train_accuracy=data.get("train_accuracy"),
            test_overall_accuracy=data["test_overall_accuracy"],
            per_class_accuracy=_labels_from_dict(data["per_class_accuracy"]),
            per_class_precision=_labels_from_dict(data.get("per_class_precision")),
            per_class_f1=_labels_from_dict(data.get("per_class_f1")),
            confusion=np.asarray(data["confusion"], dtype=np.int64),
        )


@PublicAPI(stability="beta")
@dataclass
class RunReport:
    """Result of one training run, persisted as JSON."""

    config: TrainConfig
    epochs: List[EpochMetrics]
    wall_time_seconds: float
    weights_checksum: str
    split_checksum: Optional[str] = None
    weight_decay_mode: str = WEIGHT_DECAY_COUPLED
    provenance: Dict[str, Any] = field(default_factory=dict)
    name: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "config": self.config.to_dict(),
            "weight_decay_mode": self.weight_decay_mode,
            "split_checksum": self.split_checksum,
            "weights_checksum": self.weights_checksum,
            "wall_time_seconds": self.wall_time_seconds,
            "provenance": self.provenance,
            "epochs": [metrics.to_dict() for metrics in self.epochs],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunReport":
        return cls(
            config=TrainConfig.from_dict(data["config"]),
            epochs=[EpochMetrics.from_dict(m) for m in data["epochs"]],
            wall_time_seconds=data["wall_time_seconds"],
            weights_checksum=data["weights_checksum"],
            split_checksum=data.get("split_checksum"),
            weight_decay_mode=data.get("weight_decay_mode", WEIGHT_DECAY_COUPLED),
            provenance=data.get("provenance", {}),
            name=data.get("name"),
        )

    def save(self, path: str):
        with open(path, "wt") as fp:
            json.dump(self.to_dict(), fp, indent=2)

    @classmethod
    def load(cls, path: str) -> "RunReport":
        with open(path, "rt") as fp:
            return cls.from_dict(json.load(fp))


class _PipelineDataset(TorchDataset):
    """Applies a ``TexturePipeline`` to samples on access.

    ``epoch`` is read on every access; DataLoader workers are recreated
    each epoch, so updating it between epochs is sufficient.
    """

    def __init__(self, dataset: Dataset, pipeline: TexturePipeline, seed: int):
        self.dataset = dataset
        self.pipeline = pipeline
        self.seed = seed
        self.epoch = 0

    def __len__(self) -> int:
        return len(self.dataset)

    def __getitem__(self, index: int):
        sample = self.dataset[index]
        image = self.pipeline(sample.image, self.seed, sample.source_id, self.epoch)
        return torch.from_numpy(image), sample.label.index


def _make_loader(
    data: _PipelineDataset, batch_size: int, order: Optional[Sequence[int]] = None
) -> DataLoader:
    return DataLoader(
        data,
        batch_size=batch_size,
        sampler=list(order) if order is not None else None,
        shuffle=False,
        num_workers=ENV.NUM_DATA_WORKERS,
    )


def _configure_torch():
    if ENV.TORCH_NUM_THREADS > 0:
        torch.set_num_threads(ENV.TORCH_NUM_THREADS)
    if ENV.DETERMINISTIC:
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.benchmark = False


def _check_not_empty(dataset: Dataset, name: str):
    if not len(dataset):
        raise ValueError(
            f"The {name} set is empty."
            f"\nFIX THIS by providing more data or changing `train_fraction`."
        )


def _make_optimizer(
    config: TrainConfig, classifier: TextureClassifier
) -> torch.optim.Optimizer:
    params = [p for p in classifier.parameters() if p.requires_grad]
    optimizer_cls = (
        torch.optim.AdamW if config.decoupled_weight_decay else torch.optim.Adam
    )
    return optimizer_cls(
        params, lr=config.learning_rate, weight_decay=config.weight_decay
    )


@PublicAPI(stability="beta")
def evaluate(
    classifier: nn.Module,
    test_set: Dataset,
    pipeline: Optional[TexturePipeline] = None,
    seed: int = 0,
    epoch: int = 0,
    batch_size: int = 32,
) -> EpochMetrics:
    """Evaluate a classifier on a test set.

    The classifier runs in evaluation mode and is returned to its previous
    mode afterwards. Training statistics of the returned metrics are unset.

    Args:
        classifier: Model mapping ``(N, 3, H, W)`` batches to logits.
        test_set: Non-empty test set.
        pipeline: Preprocessing. Defaults to normalization only.
        seed: Base seed of the shuffle stage.
        epoch: Epoch index used to derive the shuffle streams.
        batch_size: Evaluation batch size.
    """
    _check_not_empty(test_set, "test")
    if pipeline is None:
        pipeline = TexturePipeline()

    was_training = classifier.training
    classifier.eval()
    predictions: List[ClassLabel] = []
    try:
        data = _PipelineDataset(test_set, pipeline, seed)
        data.epoch = epoch
        loader = _make_loader(data, batch_size)
        with torch.no_grad():
            for images, _ in loader:
                predictions.extend(labels_from_logits(forward(classifier, images)))
    finally:
        classifier.train(was_training)

    confusion = confusion_matrix(predictions, test_set.labels)
    return EpochMetrics(
        epoch=epoch,
        train_loss=float("nan"),
        test_overall_accuracy=overall_accuracy(confusion),
        per_class_accuracy=per_class_accuracy(confusion, warn=False),
        per_class_precision=per_class_precision(confusion),
        per_class_f1=per_class_f1(confusion),
        confusion=confusion,
    )


@PublicAPI(stability="beta")
def train(
    config: Union[None, TrainConfig, dict],
    train_set: Dataset,
    test_set: Dataset,
    callbacks: Optional[Sequence[TrainingCallback]] = None,
    name: Optional[str] = None,
) -> RunReport:
    """Train a texture classifier and evaluate it after every epoch.

    Each epoch visits the training set in a seeded order, runs every sample
    through the configured pipeline (augment, normalize, optional patch
    shuffle) and minimizes mean cross-entropy with Adam. The test set is
    then evaluated with the same pipeline minus augmentation.

    All randomness derives from ``config.seed``: equal configs and data
    give identical loss sequences on the same platform.

    Args:
        config: Training config, dict of config fields or None.
        train_set: Training data.
        test_set: Test data. Should contain every class.
        callbacks: Training callbacks, e.g.
            :class:`LoggingCallback <texture_ray.callback.LoggingCallback>`.
        name: Run name stored in the report.

    Returns:
        A ``RunReport`` with one ``EpochMetrics`` per epoch.
    """
    config = _validate_train_config(config)
    _check_not_empty(train_set, "training")
    _check_not_empty(test_set, "test")

    missing = test_set.missing_classes()
    if missing:
        warnings.warn(
            f"The test set contains no samples of class(es) "
            f"{[label.label_name for label in missing]}. Their accuracy "
            f"will be undefined."
        )

    maybe_log = logger.info if config.verbose else logger.debug
    checksum = split_checksum(train_set, test_set)
    maybe_log(
        f"[TextureRay] {describe(train_set, 'train')}; "
        f"{describe(test_set, 'test')}; split checksum {checksum[:16]}."
    )

    start_time = time.time()
    _configure_torch()
    torch.manual_seed(config.seed)

    if config.static_expansion:
        train_set = expand_dataset(train_set, config.augment, config.seed)

    classifier = build_classifier(config.classifier, seed=config.seed)
    optimizer = _make_optimizer(config, classifier)
    criterion = nn.CrossEntropyLoss()

    train_data = _PipelineDataset(train_set, config.train_pipeline(), config.seed)
    eval_pipeline = config.eval_pipeline()

    callbacks = CallbackContainer(callbacks)
    callbacks.on_train_begin(config, classifier)

    epochs: List[EpochMetrics] = []
    for epoch in range(1, config.epochs + 1):
        order = derive_rng(config.seed, STREAM_ORDER, epoch).permutation(
            len(train_set)
        )
        train_data.epoch = epoch
        loader = _make_loader(train_data, config.batch_size, order)

        classifier.train()
        total_loss = 0.0
        correct = 0
        seen = 0
        for batch_index, (images, targets) in enumerate(loader, start=1):
            logits = forward(classifier, images)
            loss = criterion(logits, targets)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"Training loss became {loss.item()} in epoch {epoch}, "
                    f"batch {batch_index}."
                    "\nFIX THIS by lowering the learning rate."
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            total_loss += loss.item() * len(targets)
            correct += int((logits.argmax(dim=1) == targets).sum().item())
            seen += len(targets)

        metrics = evaluate(
            classifier,
            test_set,
            eval_pipeline,
            seed=config.seed,
            epoch=epoch,
            batch_size=config.batch_size,
        )
        metrics.train_loss = total_loss / seen
        metrics.train_accuracy = correct / seen
        epochs.append(metrics)
        callbacks.on_epoch_end(metrics, classifier)

    report = RunReport(
        config=config,
        epochs=epochs,
        wall_time_seconds=time.time() - start_time,
        weights_checksum=state_checksum(classifier),
        split_checksum=checksum,
        weight_decay_mode=config.weight_decay_mode,
        provenance={
            **classifier.provenance(),
            "torch_version": torch.__version__,
            "python_version": platform.python_version(),
            "platform": platform.platform(),
        },
        name=name,
    )
    callbacks.on_train_end(report, classifier)
    return report

