"""Synthetic texture windows for desk-scale experiments.

Each class differs only in local texture statistics. A random low-frequency
gradient and brightness offset are laid over every image so that global
layout carries no class information, and the class signatures survive
patch shuffling.
"""
from typing import Tuple

import numpy as np
from ray.util.annotations import PublicAPI

from texture_ray.dataset import ClassLabel, Dataset, TextureSample
from texture_ray.util import STREAM_SYNTH, derive_rng

MIN_SYNTHETIC_SIZE = 16

BASE_LEVEL = 128.0
GRADIENT_AMPLITUDE = 40.0
OFFSET_RANGE = 20.0

FINE_NOISE_STD = 6.0
COARSE_NOISE_STD = 40.0
COARSE_CELL = 4
STRIPE_PERIOD = 4.0
STRIPE_AMPLITUDE = 45.0
SPECKLE_DENSITY = 0.04
SPECKLE_LEVEL = 20.0
BACKGROUND_NOISE_STD = 3.0


def _fine_noise(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    return rng.normal(0.0, FINE_NOISE_STD, size=(height, width))


def _coarse_noise(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    cells_h = -(-height // COARSE_CELL)
    cells_w = -(-width // COARSE_CELL)
    cells = rng.normal(0.0, COARSE_NOISE_STD, size=(cells_h, cells_w))
    coarse = np.kron(cells, np.ones((COARSE_CELL, COARSE_CELL)))
    return coarse[:height, :width]


def _stripes(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    phase = rng.uniform(0.0, 2 * np.pi)
    rows = np.sin(2 * np.pi * np.arange(height) / STRIPE_PERIOD + phase)
    stripes = STRIPE_AMPLITUDE * np.repeat(rows[:, None], width, axis=1)
    return stripes + rng.normal(0.0, BACKGROUND_NOISE_STD, size=(height, width))


def _speckles(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    texture = rng.normal(0.0, BACKGROUND_NOISE_STD, size=(height, width))
    mask = rng.random((height, width)) < SPECKLE_DENSITY
    texture[mask] = SPECKLE_LEVEL - BASE_LEVEL
    return texture


_TEXTURES = {
    ClassLabel.FLUID: _fine_noise,
    ClassLabel.GOOD: _coarse_noise,
    ClassLabel.DRY: _stripes,
    ClassLabel.TEARING: _speckles,
}


def _global_field(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    angle = rng.uniform(0.0, 2 * np.pi)
    amplitude = rng.uniform(-GRADIENT_AMPLITUDE, GRADIENT_AMPLITUDE)
    offset = rng.uniform(-OFFSET_RANGE, OFFSET_RANGE)
    yy, xx = np.mgrid[0:height, 0:width]
    ramp = np.cos(angle) * (xx / max(width - 1, 1)) + np.sin(angle) * (
        yy / max(height - 1, 1)
    )
    return amplitude * (ramp - ramp.mean()) + offset


def _render(label: ClassLabel, rng: np.random.Generator, height: int, width: int):
    gray = BASE_LEVEL + _TEXTURES[label](rng, height, width)
    gray = gray + _global_field(rng, height, width)
    tint = rng.uniform(-6.0, 6.0, size=3)
    rgb = gray[:, :, None] + tint[None, None, :]
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


@PublicAPI(stability="beta")
def generate_synthetic_textures(
    n_per_class: int, size: Tuple[int, int], seed: int
) -> Dataset:
    """Generate ``4 * n_per_class`` labeled synthetic texture windows.

    Signatures per class: fluid is fine low-variance noise, good is coarse
    high-variance noise, dry is high-frequency horizontal stripes and
    tearing is sparse dark speckles.

    Args:
        n_per_class: Number of images per class (>= 1).
        size: ``(height, width)``, both >= 16.
        seed: Random seed. Output is pixel-identical for equal seeds.

    Returns:
        Dataset ordered class by class.
    """
    height, width = int(size[0]), int(size[1])
    if n_per_class < 1:
        raise ValueError(f"`n_per_class` must be at least 1, got {n_per_class}.")
    if height < MIN_SYNTHETIC_SIZE or width < MIN_SYNTHETIC_SIZE:
        raise ValueError(
            f"Synthetic images must be at least {MIN_SYNTHETIC_SIZE}x"
            f"{MIN_SYNTHETIC_SIZE} pixels, got {height}x{width}."
        )

    samples = []
    for label in ClassLabel:
        for i in range(n_per_class):
            rng = derive_rng(seed, STREAM_SYNTH, label.index, i)
            samples.append(
                TextureSample(
                    image=_render(label, rng, height, width),
                    label=label,
                    source_id=f"synthetic_{label.label_name}_{i:04d}",
                )
            )
    return Dataset(samples)
