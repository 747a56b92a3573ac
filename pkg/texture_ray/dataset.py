import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError
from ray import logger
from ray.util.annotations import DeveloperAPI, PublicAPI

from texture_ray.util import STREAM_SPLIT, derive_rng, ids_checksum

LABELS_CSV = "labels.csv"
IMAGES_DIR = "images"

FILENAME_COLUMN = "filename"
LABEL_COLUMN = "label"

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class DatasetIngestionError(RuntimeError):
    """Raised when label maps or images cannot be read from disk."""

    pass


class LabelValidationError(ValueError):
    """Raised when a label map contains unknown labels or duplicate ids."""

    pass


@PublicAPI(stability="beta")
class ClassLabel(Enum):
    """Rheology classes of extruded cement texture windows.

    The integer value of each member is its class index. The ordering is
    fixed and used for model outputs, confusion matrices and reports.
    """

    FLUID = 0
    GOOD = 1
    DRY = 2
    TEARING = 3

    @property
    def index(self) -> int:
        return self.value

    @property
    def label_name(self) -> str:
        return self.name.lower()

    @classmethod
    def from_index(cls, index: int) -> "ClassLabel":
        return cls(int(index))

    @classmethod
    def parse(cls, value: str) -> "ClassLabel":
        """Parse a label string, ignoring case and surrounding whitespace."""
        key = str(value).strip().upper()
        try:
            return cls[key]
        except KeyError:
            raise ValueError(
                f"Unknown texture label `{value}`. Valid labels are: "
                f"{', '.join(c.label_name for c in cls)}."
            ) from None


NUM_CLASSES = len(ClassLabel)


@PublicAPI(stability="beta")
@dataclass(frozen=True, eq=False)
class TextureSample:
    image: np.ndarray
    label: ClassLabel
    source_id: str

    def __post_init__(self):
        image = self.image
        if not isinstance(image, np.ndarray) or image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(
                f"Sample `{self.source_id}` must hold an RGB array of shape "
                f"(height, width, 3), got "
                f"{getattr(image, 'shape', type(image))}."
            )
        if image.shape[0] < 1 or image.shape[1] < 1:
            raise ValueError(f"Sample `{self.source_id}` has an empty image.")
        if image.dtype != np.uint8:
            raise ValueError(
                f"Sample `{self.source_id}` must hold 8-bit channels, got "
                f"dtype {image.dtype}."
                "\nFIX THIS by converting with `np.clip(x, 0, 255)"
                ".astype(np.uint8)`."
            )
        if not isinstance(self.label, ClassLabel):
            raise ValueError(
                f"Sample `{self.source_id}` label must be a ClassLabel, got "
                f"{type(self.label)}."
            )


@PublicAPI(stability="beta")
@dataclass
class Dataset:
    """Ordered collection of texture samples."""

    samples: List[TextureSample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[TextureSample]:
        return iter(self.samples)

    def __getitem__(self, index: int) -> TextureSample:
        return self.samples[index]

    @property
    def class_counts(self) -> Dict[ClassLabel, int]:
        counts = {label: 0 for label in ClassLabel}
        for sample in self.samples:
            counts[sample.label] += 1
        return counts

    @property
    def labels(self) -> List[ClassLabel]:
        return [sample.label for sample in self.samples]

    @property
    def source_ids(self) -> List[str]:
        return [sample.source_id for sample in self.samples]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset([self.samples[i] for i in indices])

    def missing_classes(self) -> List[ClassLabel]:
        return [label for label, count in self.class_counts.items() if count == 0]


def _csv_line(row_index: int) -> int:
    # Header is line 1
    return row_index + 2


@PublicAPI(stability="beta")
def load_label_map(csv_path: str) -> List[Tuple[str, ClassLabel]]:
    """Read a ``filename,label`` CSV into an ordered label map.

    Extra columns are ignored. Labels are parsed case-insensitively.

    Args:
        csv_path: Path to the CSV file.

    Returns:
        List of ``(image_id, ClassLabel)`` tuples in CSV row order.
    """
    if not os.path.isfile(csv_path):
        raise DatasetIngestionError(
            f"Label map `{csv_path}` does not exist."
            "\nFIX THIS by passing the path of a CSV file with the header "
            f"`{FILENAME_COLUMN},{LABEL_COLUMN}`."
        )
    try:
        frame = pd.read_csv(csv_path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DatasetIngestionError(
            f"Could not read label map `{csv_path}`: {exc}"
        ) from exc

    frame.columns = [str(col).strip().lower() for col in frame.columns]
    missing_cols = [
        col for col in (FILENAME_COLUMN, LABEL_COLUMN) if col not in frame.columns
    ]
    if missing_cols:
        raise LabelValidationError(
            f"Label map `{csv_path}` is missing the column(s) {missing_cols}. "
            f"Found columns: {list(frame.columns)}."
            "\nFIX THIS by adding the header row "
            f"`{FILENAME_COLUMN},{LABEL_COLUMN}`."
        )

    entries: List[Tuple[str, ClassLabel]] = []
    seen: Dict[str, int] = {}
    for row_index, (image_id, label_str) in enumerate(
        zip(frame[FILENAME_COLUMN], frame[LABEL_COLUMN])
    ):
        image_id = image_id.strip()
        line = _csv_line(row_index)
        try:
            label = ClassLabel.parse(label_str)
        except ValueError as exc:
            raise LabelValidationError(
                f"Row {line} of `{csv_path}` (image `{image_id}`): {exc}"
            ) from None
        if image_id in seen:
            raise LabelValidationError(
                f"Row {line} of `{csv_path}` repeats image id `{image_id}` "
                f"(first seen on row {seen[image_id]})."
            )
        seen[image_id] = line
        entries.append((image_id, label))

    logger.debug(f"[TextureRay] Read {len(entries)} label rows from {csv_path}.")
    return entries


def _read_image(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DatasetIngestionError(
            f"Could not decode image file `{path}`: {exc}"
        ) from exc


@PublicAPI(stability="beta")
def load_dataset(
    image_dir: str, label_map: Sequence[Tuple[str, ClassLabel]]
) -> Dataset:
    """Load one texture sample per label map entry from ``image_dir``.

    All missing files are collected and reported in a single error before
    any image is decoded.
    """
    paths = [os.path.join(image_dir, image_id) for image_id, _ in label_map]
    missing = [
        image_id
        for (image_id, _), path in zip(label_map, paths)
        if not os.path.isfile(path)
    ]
    if missing:
        raise DatasetIngestionError(
            f"{len(missing)} image(s) referenced by the label map were not "
            f"found under `{image_dir}`: {missing}"
        )

    samples = [
        TextureSample(image=_read_image(path), label=label, source_id=image_id)
        for (image_id, label), path in zip(label_map, paths)
    ]
    dataset = Dataset(samples)
    logger.debug(
        f"[TextureRay] Loaded {len(dataset)} images from {image_dir} "
        f"(class counts: {_format_counts(dataset.class_counts)})."
    )
    return dataset


def _format_counts(counts: Dict[ClassLabel, int]) -> str:
    return ", ".join(f"{label.label_name}={n}" for label, n in counts.items())


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5 + 1e-9))


@PublicAPI(stability="beta")
def stratified_split(
    dataset: Dataset, train_fraction: float, seed: int
) -> Tuple[Dataset, Dataset]:
    """Split a dataset per class into train and test sets.

    For each class ``c``, ``round(train_fraction * n_c)`` samples (rounded
    half up) are drawn uniformly at random into the training set; the rest
    go to the test set. Both sets keep the dataset's original order.

    Args:
        dataset: Dataset to split.
        train_fraction: Fraction in ``(0, 1]`` assigned to training.
        seed: Random seed. Membership is a pure function of
            ``(dataset order, train_fraction, seed)``.

    Returns:
        ``(train, test)`` tuple of datasets.
    """
    if not len(dataset):
        raise ValueError(
            "Cannot split an empty dataset."
            "\nFIX THIS by checking that the label map has at least one row."
        )
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError(
            f"`train_fraction` must be in (0, 1], got {train_fraction}."
        )

    by_class: Dict[ClassLabel, List[int]] = {label: [] for label in ClassLabel}
    for i, sample in enumerate(dataset):
        by_class[sample.label].append(i)

    train_indices = set()
    for label, indices in by_class.items():
        if not indices:
            continue
        n_train = min(len(indices), _round_half_up(train_fraction * len(indices)))
        rng = derive_rng(seed, STREAM_SPLIT, label.index)
        chosen = rng.permutation(len(indices))[:n_train]
        train_indices.update(indices[j] for j in chosen)

    train = dataset.subset([i for i in range(len(dataset)) if i in train_indices])
    test = dataset.subset([i for i in range(len(dataset)) if i not in train_indices])
    return train, test


@DeveloperAPI
def split_checksum(train: Dataset, test: Dataset) -> str:
    """Fingerprint of a split, independent of sample order."""
    return ids_checksum(
        [f"train/{i}" for i in train.source_ids]
        + [f"test/{i}" for i in test.source_ids]
    )


def _export_name(source_id: str) -> str:
    stem, ext = os.path.splitext(os.path.basename(source_id))
    if ext.lower() not in IMAGE_EXTENSIONS:
        stem = os.path.basename(source_id)
    return f"{stem}.png"


def _export_names(source_ids: Sequence[str]) -> List[str]:
    """PNG file names for ``source_ids``, unique even on case-insensitive
    file systems. Colliding names get a ``_<n>`` suffix in dataset order."""
    names = []
    taken = set()
    for source_id in source_ids:
        name = _export_name(source_id)
        stem = name[: -len(".png")]
        suffix = 1
        while name.lower() in taken:
            name = f"{stem}_{suffix}.png"
            suffix += 1
        taken.add(name.lower())
        names.append(name)
    return names


@PublicAPI(stability="beta")
def export_dataset(dataset: Dataset, out_dir: str) -> Tuple[str, str]:
    """Write a dataset as PNG images plus a ``filename,label`` CSV.

    Returns:
        ``(image_dir, csv_path)`` that can be passed to
        :func:`load_label_map` and :func:`load_dataset`.
    """
    image_dir = os.path.join(out_dir, IMAGES_DIR)
    os.makedirs(image_dir, exist_ok=True)

    rows = []
    for sample, filename in zip(dataset, _export_names(dataset.source_ids)):
        Image.fromarray(sample.image).save(
            os.path.join(image_dir, filename)
        )
        rows.append({FILENAME_COLUMN: filename, LABEL_COLUMN: sample.label.label_name})

    csv_path = os.path.join(out_dir, LABELS_CSV)
    pd.DataFrame(rows, columns=[FILENAME_COLUMN, LABEL_COLUMN]).to_csv(
        csv_path, index=False
    )
    logger.info(f"[TextureRay] Wrote {len(rows)} images to {image_dir}.")
    return image_dir, csv_path


def describe(dataset: Dataset, name: Optional[str] = None) -> str:
    prefix = f"{name}: " if name else ""
    return f"{prefix}{len(dataset)} samples ({_format_counts(dataset.class_counts)})"
