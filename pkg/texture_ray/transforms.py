import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from ray import logger
from ray.util.annotations import DeveloperAPI, PublicAPI
from skimage import transform as sktransform

from texture_ray.dataset import Dataset, TextureSample
from texture_ray.util import STREAM_AUGMENT, STREAM_EXPAND, STREAM_SHUFFLE, derive_rng

# Published ImageNet pretraining statistics of the torchvision backbones.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

DEFAULT_IMAGE_SIZE = 224
DEFAULT_PATCH_SIZE = 56


@PublicAPI(stability="beta")
@dataclass(frozen=True)
class PatchGrid:
    """Square patch decomposition of a centered, patch-aligned crop."""

    patch_size: int
    rows: int
    cols: int
    fitted_height: int
    fitted_width: int
    crop_offset: Tuple[int, int]

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols


@PublicAPI(stability="beta")
def make_patch_grid(height: int, width: int, patch_size: int) -> PatchGrid:
    """Fit the largest grid of ``patch_size`` squares into an image.

    Non-divisible dimensions are center-cropped, never resampled.
    """
    if patch_size < 1 or patch_size > min(height, width):
        raise ValueError(
            f"Patch size {patch_size} does not fit into an image of "
            f"{height}x{width} pixels."
            "\nFIX THIS by choosing a patch size between 1 and the smaller "
            "image dimension."
        )
    rows = height // patch_size
    cols = width // patch_size
    fitted_height = rows * patch_size
    fitted_width = cols * patch_size
    return PatchGrid(
        patch_size=patch_size,
        rows=rows,
        cols=cols,
        fitted_height=fitted_height,
        fitted_width=fitted_width,
        crop_offset=((height - fitted_height) // 2, (width - fitted_width) // 2),
    )


def fisher_yates(n: int, rng: np.random.Generator) -> np.ndarray:
    order = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def extract_patches(image: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Patches of a channels-last image in row-major grid order.

    Returns an array of shape ``(rows * cols, p, p, channels)``.
    """
    top, left = grid.crop_offset
    p = grid.patch_size
    fitted = image[top : top + grid.fitted_height, left : left + grid.fitted_width]
    channels = fitted.shape[2]
    return (
        fitted.reshape(grid.rows, p, grid.cols, p, channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(grid.num_patches, p, p, channels)
    )


def assemble_patches(patches: np.ndarray, grid: PatchGrid) -> np.ndarray:
    p = grid.patch_size
    channels = patches.shape[-1]
    return (
        patches.reshape(grid.rows, grid.cols, p, p, channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(grid.fitted_height, grid.fitted_width, channels)
    )


@PublicAPI(stability="beta")
def patch_and_shuffle(
    image: np.ndarray,
    patch_size: int,
    rng: np.random.Generator,
    channels_first: bool = False,
) -> np.ndarray:
    """Cut an image into square patches, permute them and reassemble.

    The permutation is drawn with a Fisher-Yates shuffle on ``rng``. The
    output covers the fitted (center-cropped) region only; output patch ``k``
    in row-major order is input patch ``perm[k]``. The input is not modified.

    Args:
        image: ``(H, W, C)`` array, or ``(C, H, W)`` with
            ``channels_first=True``.
        patch_size: Side length of the square patches in pixels.
        rng: Random stream the permutation is drawn from.
        channels_first: Whether the channel axis comes first.

    Returns:
        Shuffled array with the same layout and dtype as ``image``.
    """
    if image.ndim != 3:
        raise ValueError(f"Expected a 3-dimensional image, got shape {image.shape}.")
    hwc = np.moveaxis(image, 0, -1) if channels_first else image
    grid = make_patch_grid(hwc.shape[0], hwc.shape[1], patch_size)

    patches = extract_patches(hwc, grid)
    perm = fisher_yates(grid.num_patches, rng)
    shuffled = assemble_patches(patches[perm], grid)

    if channels_first:
        shuffled = np.moveaxis(shuffled, -1, 0)
    return np.ascontiguousarray(shuffled)


@PublicAPI(stability="beta")
@dataclass(frozen=True)
class AugmentConfig:
    """Ranges of the random photometric and geometric augmentations.

    Args:
        max_rotation_deg: Rotation angle is drawn from
            ``Uniform(-max_rotation_deg, max_rotation_deg)``.
        zoom_range: Zoom factor range (``> 1`` zooms in).
        illumination_range: Multiplicative brightness factor range.
        expansion_factor: Size multiplier of :func:`expand_dataset`.
    """

    max_rotation_deg: float = 15.0
    zoom_range: Tuple[float, float] = (0.9, 1.1)
    illumination_range: Tuple[float, float] = (0.8, 1.2)
    expansion_factor: int = 16

    def __post_init__(self):
        if self.max_rotation_deg < 0:
            raise ValueError(
                f"`max_rotation_deg` must be non-negative, got {self.max_rotation_deg}."
            )
        for name in ("zoom_range", "illumination_range"):
            low, high = getattr(self, name)
            if not 0.0 < low <= high:
                raise ValueError(
                    f"`{name}` must be a positive (min, max) range, got "
                    f"({low}, {high})."
                )
            if not low <= 1.0 <= high:
                warnings.warn(
                    f"`{name}` ({low}, {high}) does not contain 1.0, so "
                    f"every augmented image is systematically shifted."
                )
        if self.expansion_factor < 1:
            raise ValueError(
                f"`expansion_factor` must be at least 1, got {self.expansion_factor}."
            )

    @classmethod
    def identity(cls, expansion_factor: int = 1) -> "AugmentConfig":
        return cls(
            max_rotation_deg=0.0,
            zoom_range=(1.0, 1.0),
            illumination_range=(1.0, 1.0),
            expansion_factor=expansion_factor,
        )


def _zoom(image: np.ndarray, factor: float) -> np.ndarray:
    height, width = image.shape[:2]
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    matrix = np.array(
        [
            [factor, 0.0, (1.0 - factor) * cx],
            [0.0, factor, (1.0 - factor) * cy],
            [0.0, 0.0, 1.0],
        ]
    )
    tform = sktransform.AffineTransform(matrix=matrix)
    return sktransform.warp(
        image, tform.inverse, order=1, mode="reflect", preserve_range=True
    )


def _check_image(image: np.ndarray):
    if not isinstance(image, np.ndarray) or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(
            f"Expected an RGB array of shape (height, width, 3), got "
            f"{getattr(image, 'shape', type(image))}."
        )


@PublicAPI(stability="beta")
def augment(
    image: np.ndarray, config: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    """Randomly rotate, zoom and relight an 8-bit RGB image.

    Rotation is about the image center with reflection padding, followed by
    a zoom about the center and one multiplicative brightness factor for
    all pixels, clamped to ``[0, 255]``. Output shape equals input shape.
    """
    _check_image(image)
    # Always draw all three values so the stream layout is config-independent
    angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg)
    zoom = rng.uniform(*config.zoom_range)
    brightness = rng.uniform(*config.illumination_range)

    out = image.astype(np.float64)
    if angle != 0.0:
        out = sktransform.rotate(
            out, angle, resize=False, order=1, mode="reflect", preserve_range=True
        )
    if zoom != 1.0:
        out = _zoom(out, zoom)
    out = out * brightness
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


@PublicAPI(stability="beta")
def expand_dataset(dataset: Dataset, config: AugmentConfig, seed: int) -> Dataset:
    """Materialize ``expansion_factor`` variants of every sample.

    Variant 0 is the original sample, variants ``1..k-1`` are augmented
    copies. Labels are inherited and variant ids are ``<id>#aug<v>``.
    """
    if not len(dataset):
        raise ValueError("Cannot expand an empty dataset.")

    samples: List[TextureSample] = []
    for sample in dataset:
        samples.append(sample)
        for variant in range(1, config.expansion_factor):
            rng = derive_rng(seed, STREAM_EXPAND, sample.source_id, variant)
            samples.append(
                TextureSample(
                    image=augment(sample.image, config, rng),
                    label=sample.label,
                    source_id=f"{sample.source_id}#aug{variant:02d}",
                )
            )
    logger.debug(
        f"[TextureRay] Expanded {len(dataset)} samples by a factor of "
        f"{config.expansion_factor} to {len(samples)} samples."
    )
    return Dataset(samples)


@PublicAPI(stability="beta")
def normalize_for_backbone(
    image: np.ndarray,
    target_size: Tuple[int, int] = (DEFAULT_IMAGE_SIZE, DEFAULT_IMAGE_SIZE),
    mean: Tuple[float, float, float] = IMAGENET_MEAN,
    std: Tuple[float, float, float] = IMAGENET_STD,
) -> np.ndarray:
    """Resize (bilinear), scale to ``[0, 1]`` and standardize per channel.

    Returns:
        ``float32`` array of shape ``(3, target_h, target_w)``.
    """
    _check_image(image)
    out = image.astype(np.float64) / 255.0
    target_size = (int(target_size[0]), int(target_size[1]))
    if out.shape[:2] != target_size:
        out = sktransform.resize(
            out,
            target_size + (3,),
            order=1,
            mode="edge",
            anti_aliasing=False,
            preserve_range=True,
        )
    out = (out - np.asarray(mean)) / np.asarray(std)
    return np.ascontiguousarray(out.transpose(2, 0, 1), dtype=np.float32)


@DeveloperAPI
@dataclass(frozen=True)
class TexturePipeline:
    """Per-sample preprocessing: augment -> normalize -> optional shuffle.

    Every random stage draws from a stream derived from
    ``(seed, stage, sample id, epoch)``, so each access in a new epoch sees
    a fresh augmentation and a fresh permutation while remaining
    reproducible.

    Args:
        image_size: Square side length of the backbone input.
        patch_size: Patch side length for the shuffle stage.
        shuffle_enabled: Whether the patch-and-shuffle stage runs.
        augment_config: Augmentation ranges. ``None`` skips augmentation
            (evaluation and statically expanded training data).
    """

    image_size: int = DEFAULT_IMAGE_SIZE
    patch_size: int = DEFAULT_PATCH_SIZE
    shuffle_enabled: bool = False
    augment_config: Optional[AugmentConfig] = field(default=None)

    def __call__(
        self, image: np.ndarray, seed: int, sample_id: Union[str, int], epoch: int
    ) -> np.ndarray:
        if self.augment_config is not None:
            image = augment(
                image,
                self.augment_config,
                derive_rng(seed, STREAM_AUGMENT, sample_id, epoch),
            )
        out = normalize_for_backbone(image, (self.image_size, self.image_size))
        if self.shuffle_enabled:
            out = patch_and_shuffle(
                out,
                self.patch_size,
                derive_rng(seed, STREAM_SHUFFLE, sample_id, epoch),
                channels_first=True,
            )
        return out

    def without_augmentation(self) -> "TexturePipeline":
        return TexturePipeline(
            image_size=self.image_size,
            patch_size=self.patch_size,
            shuffle_enabled=self.shuffle_enabled,
            augment_config=None,
        )
