from typing import List, Optional, Sequence

import numpy as np
import torch
from torch import nn

from texture_ray.dataset import ClassLabel, Dataset, TextureSample
from texture_ray.main import EpochMetrics, RunReport, TrainConfig
from texture_ray.model import ClassifierSpec
from texture_ray.transforms import AugmentConfig, normalize_for_backbone


def constant_image(value: int, size: int = 16) -> np.ndarray:
    return np.full((size, size, 3), value, dtype=np.uint8)


def random_image(height: int, width: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)


def make_dataset(labels: Sequence[ClassLabel], size: int = 16) -> Dataset:
    """One random image per label, ids ``sample_<i>``."""
    return Dataset(
        [
            TextureSample(
                image=random_image(size, size, seed=i),
                label=label,
                source_id=f"sample_{i}",
            )
            for i, label in enumerate(labels)
        ]
    )


def balanced_labels(n_per_class: int) -> List[ClassLabel]:
    return [label for label in ClassLabel for _ in range(n_per_class)]


def tiny_config(**kwargs) -> TrainConfig:
    """Config small enough to train on CPU within seconds."""
    params = dict(
        epochs=2,
        learning_rate=1e-3,
        batch_size=8,
        image_size=64,
        patch_size=16,
        augment=AugmentConfig(max_rotation_deg=10.0),
        classifier=ClassifierSpec(pretrained=False),
        verbose=False,
    )
    params.update(kwargs)
    return TrainConfig(**params)


def fake_metrics(
    epoch: int,
    accuracy: float,
    per_class: Optional[Sequence[Optional[float]]] = None,
    train_loss: float = 1.0,
    train_accuracy: Optional[float] = None,
) -> EpochMetrics:
    per_class = per_class if per_class is not None else [accuracy] * 4
    return EpochMetrics(
        epoch=epoch,
        train_loss=train_loss,
        train_accuracy=train_accuracy,
        test_overall_accuracy=accuracy,
        per_class_accuracy=dict(zip(ClassLabel, per_class)),
        confusion=np.zeros((4, 4), dtype=np.int64),
    )


def fake_report(
    accuracies: Sequence[float], name: Optional[str] = None, **config_kwargs
) -> RunReport:
    config = TrainConfig(epochs=max(1, len(accuracies)), **config_kwargs)
    return RunReport(
        config=config,
        epochs=[fake_metrics(i + 1, acc) for i, acc in enumerate(accuracies)],
        wall_time_seconds=0.0,
        weights_checksum="0" * 64,
        split_checksum="1" * 64,
        name=name,
    )


class ConstantClassifier(nn.Module):
    """Always predicts the same class."""

    def __init__(self, label: ClassLabel):
        super(ConstantClassifier, self).__init__()
        self.label = label

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        logits = torch.zeros(x.shape[0], 4)
        logits[:, self.label.index] = 1.0
        return logits


# Pixel value of a constant image that ``BrightnessClassifier`` maps to
# class ``k``.
def encoded_value(label: ClassLabel) -> int:
    return 10 + 60 * label.index


class BrightnessClassifier(nn.Module):
    """Predicts the class encoded in a constant image's brightness."""

    def __init__(self):
        super(BrightnessClassifier, self).__init__()
        centers = [
            normalize_for_backbone(constant_image(encoded_value(label)), (16, 16))
            for label in ClassLabel
        ]
        self.centers = torch.tensor([float(c[0, 0, 0]) for c in centers])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        means = x[:, 0].mean(dim=(1, 2))
        return -(means[:, None] - self.centers[None, :]).abs()
