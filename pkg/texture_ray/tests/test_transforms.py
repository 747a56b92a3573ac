import itertools
import unittest
import warnings
from collections import Counter

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from texture_ray.dataset import ClassLabel
from texture_ray.tests.utils import constant_image, make_dataset, random_image
from texture_ray.transforms import (
    IMAGENET_MEAN,
    AugmentConfig,
    TexturePipeline,
    augment,
    expand_dataset,
    make_patch_grid,
    normalize_for_backbone,
    patch_and_shuffle,
)
from texture_ray.util import STREAM_SHUFFLE, derive_rng


def _patches(image: np.ndarray, patch_size: int):
    """Row-major patches of the centered fitted region, by plain slicing."""
    height, width = image.shape[:2]
    rows, cols = height // patch_size, width // patch_size
    top = (height - rows * patch_size) // 2
    left = (width - cols * patch_size) // 2
    return [
        image[
            top + r * patch_size : top + (r + 1) * patch_size,
            left + c * patch_size : left + (c + 1) * patch_size,
        ]
        for r in range(rows)
        for c in range(cols)
    ]


def _canonical(patches):
    return sorted(p.tobytes() for p in patches)


def _reference_permutation(n: int, rng: np.random.Generator):
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order


class PatchGridTest(unittest.TestCase):
    def testExactDivisibility(self):
        grid = make_patch_grid(224, 224, 56)
        self.assertEqual((grid.rows, grid.cols), (4, 4))
        self.assertEqual(grid.crop_offset, (0, 0))
        self.assertEqual(grid.num_patches, 16)

    def testCenteredCrop(self):
        grid = make_patch_grid(230, 224, 56)
        self.assertEqual((grid.rows, grid.cols), (4, 4))
        self.assertEqual((grid.fitted_height, grid.fitted_width), (224, 224))
        self.assertEqual(grid.crop_offset, (3, 0))

    def testPatchTooLarge(self):
        with self.assertRaises(ValueError):
            make_patch_grid(10, 10, 11)
        with self.assertRaises(ValueError):
            make_patch_grid(10, 10, 0)


class PatchAndShuffleTest(unittest.TestCase):
    def testSinglePatchIsIdentity(self):
        image = random_image(2, 2)
        out = patch_and_shuffle(image, 2, np.random.default_rng(0))
        np.testing.assert_array_equal(out, image)

    def testConstantImage(self):
        image = constant_image(123, size=64)
        for seed in range(5):
            out = patch_and_shuffle(image, 16, np.random.default_rng(seed))
            np.testing.assert_array_equal(out, image)

    def testLayoutMatchesFisherYates(self):
        image = np.arange(16 * 3, dtype=np.uint8).reshape(4, 4, 3)
        out = patch_and_shuffle(image, 2, np.random.default_rng(42))

        expected_order = _reference_permutation(4, np.random.default_rng(42))
        in_patches = _patches(image, 2)
        out_patches = _patches(out, 2)
        for k, source in enumerate(expected_order):
            np.testing.assert_array_equal(out_patches[k], in_patches[source])
        self.assertEqual(_canonical(out_patches), _canonical(in_patches))

    def testInputNotMutated(self):
        image = random_image(12, 12)
        copy = image.copy()
        patch_and_shuffle(image, 4, np.random.default_rng(1))
        np.testing.assert_array_equal(image, copy)

    def testChannelsFirstMatchesChannelsLast(self):
        image = random_image(12, 8)
        hwc = patch_and_shuffle(image, 4, np.random.default_rng(3))
        chw = patch_and_shuffle(
            np.moveaxis(image, -1, 0), 4, np.random.default_rng(3), channels_first=True
        )
        np.testing.assert_array_equal(np.moveaxis(chw, 0, -1), hwc)

    def testFullSizePatchIsIdentityForAllSeeds(self):
        image = random_image(9, 9)
        for seed in range(10):
            out = patch_and_shuffle(image, 9, np.random.default_rng(seed))
            np.testing.assert_array_equal(out, image)

    @settings(max_examples=250, deadline=None, derandomize=True)
    @given(
        height=st.integers(1, 24),
        width=st.integers(1, 24),
        data=st.data(),
        seed=st.integers(0, 2**32 - 1),
    )
    def testPatchMultisetPreserved(self, height, width, data, seed):
        patch_size = data.draw(st.integers(1, min(height, width)))
        image = random_image(height, width, seed=seed % 1000)
        grid = make_patch_grid(height, width, patch_size)

        out = patch_and_shuffle(image, patch_size, np.random.default_rng(seed))
        self.assertEqual(out.shape, (grid.fitted_height, grid.fitted_width, 3))
        self.assertEqual(out.dtype, image.dtype)
        self.assertEqual(
            _canonical(_patches(out, patch_size)),
            _canonical(_patches(image, patch_size)),
        )

        # Shuffling twice keeps the multiset as well.
        twice = patch_and_shuffle(out, patch_size, np.random.default_rng(seed + 1))
        self.assertEqual(
            _canonical(_patches(twice, patch_size)),
            _canonical(_patches(image, patch_size)),
        )

    def testPermutationUniformity(self):
        image = np.arange(4 * 3, dtype=np.uint8).reshape(2, 2, 3)
        layouts = {
            tuple(np.array(p).reshape(-1)): i
            for i, p in enumerate(itertools.permutations(image.reshape(4, 3)))
        }
        rng = np.random.default_rng(2024)
        num_trials = 10000
        counts = Counter()
        for _ in range(num_trials):
            out = patch_and_shuffle(image, 1, rng)
            counts[layouts[tuple(out.reshape(-1))]] += 1

        self.assertEqual(len(counts), 24)
        for count in counts.values():
            self.assertAlmostEqual(count / num_trials, 1 / 24, delta=0.02)


class AugmentTest(unittest.TestCase):
    def testDegenerateConfigIsIdentity(self):
        image = random_image(17, 23)
        out = augment(image, AugmentConfig.identity(), np.random.default_rng(0))
        np.testing.assert_array_equal(out, image)

    def testIlluminationClamp(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            config = AugmentConfig(
                max_rotation_deg=0.0, zoom_range=(1.0, 1.0), illumination_range=(2, 2)
            )
        out = augment(constant_image(200), config, np.random.default_rng(0))
        self.assertTrue(np.all(out == 255))

    def testRangeWithoutOneWarns(self):
        with self.assertWarns(UserWarning):
            AugmentConfig(illumination_range=(1.5, 2.0))

    def testInvalidConfig(self):
        with self.assertRaises(ValueError):
            AugmentConfig(zoom_range=(0.0, 1.0))
        with self.assertRaises(ValueError):
            AugmentConfig(zoom_range=(1.2, 0.8))
        with self.assertRaises(ValueError):
            AugmentConfig(expansion_factor=0)
        with self.assertRaises(ValueError):
            AugmentConfig(max_rotation_deg=-1.0)

    def testDeterministicAndShapePreserving(self):
        image = random_image(30, 20)
        config = AugmentConfig()
        first = augment(image, config, derive_rng(9, "a"))
        second = augment(image, config, derive_rng(9, "a"))
        np.testing.assert_array_equal(first, second)
        self.assertEqual(first.shape, image.shape)
        self.assertEqual(first.dtype, np.uint8)

    def testRotationOfConstantImageStaysConstant(self):
        # Reflection padding never introduces new colors.
        config = AugmentConfig(
            max_rotation_deg=45.0, zoom_range=(0.8, 1.2), illumination_range=(1, 1)
        )
        out = augment(constant_image(77, size=32), config, np.random.default_rng(5))
        self.assertTrue(np.all(out == 77))


class ExpandDatasetTest(unittest.TestCase):
    def setUp(self):
        self.dataset = make_dataset(list(ClassLabel), size=12)

    def testFactorSixteen(self):
        expanded = expand_dataset(self.dataset, AugmentConfig(), seed=0)
        self.assertEqual(len(expanded), 64)
        self.assertEqual(set(expanded.class_counts.values()), {16})
        self.assertEqual(expanded[0].source_id, "sample_0")
        self.assertEqual(expanded[1].source_id, "sample_0#aug01")
        np.testing.assert_array_equal(expanded[0].image, self.dataset[0].image)

    def testFactorOne(self):
        expanded = expand_dataset(
            self.dataset, AugmentConfig(expansion_factor=1), seed=0
        )
        self.assertEqual(expanded.source_ids, self.dataset.source_ids)
        for a, b in zip(expanded, self.dataset):
            np.testing.assert_array_equal(a.image, b.image)

    def testDeterministic(self):
        config = AugmentConfig(expansion_factor=3)
        first = expand_dataset(self.dataset, config, seed=4)
        second = expand_dataset(self.dataset, config, seed=4)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.image, b.image)

    def testEmpty(self):
        with self.assertRaises(ValueError):
            expand_dataset(make_dataset([]), AugmentConfig(), seed=0)


class NormalizeTest(unittest.TestCase):
    def testNoResampling(self):
        image = random_image(224, 224)
        out = normalize_for_backbone(image)
        self.assertEqual(out.shape, (3, 224, 224))
        self.assertEqual(out.dtype, np.float32)
        expected = (image[5, 7, 1] / 255.0 - 0.456) / 0.224
        self.assertAlmostEqual(float(out[1, 5, 7]), expected, places=5)

    def testMeanImageIsZero(self):
        image = np.empty((8, 8, 3), dtype=np.uint8)
        image[:] = [round(m * 255) for m in IMAGENET_MEAN]
        mean = tuple(float(v) / 255.0 for v in image[0, 0])
        out = normalize_for_backbone(image, (8, 8), mean=mean)
        np.testing.assert_array_equal(out, np.zeros((3, 8, 8), dtype=np.float32))

    def testResizeShape(self):
        out = normalize_for_backbone(random_image(64, 64), (224, 224))
        self.assertEqual(out.shape, (3, 224, 224))


class TexturePipelineTest(unittest.TestCase):
    def testShuffleIsTheOnlyDifference(self):
        image = random_image(32, 32)
        control = TexturePipeline(image_size=32, patch_size=8, augment_config=None)
        experimental = TexturePipeline(
            image_size=32, patch_size=8, shuffle_enabled=True, augment_config=None
        )
        plain = control(image, seed=1, sample_id="x", epoch=1)
        shuffled = experimental(image, seed=1, sample_id="x", epoch=1)
        expected = patch_and_shuffle(
            plain, 8, derive_rng(1, STREAM_SHUFFLE, "x", 1), channels_first=True
        )
        np.testing.assert_array_equal(shuffled, expected)

    def testFreshPermutationPerEpoch(self):
        image = random_image(32, 32)
        pipeline = TexturePipeline(image_size=32, patch_size=4, shuffle_enabled=True)
        first = pipeline(image, seed=0, sample_id="x", epoch=1)
        again = pipeline(image, seed=0, sample_id="x", epoch=1)
        second = pipeline(image, seed=0, sample_id="x", epoch=2)
        np.testing.assert_array_equal(first, again)
        self.assertFalse(np.array_equal(first, second))

    def testWithoutAugmentation(self):
        pipeline = TexturePipeline(augment_config=AugmentConfig())
        self.assertIsNone(pipeline.without_augmentation().augment_config)


if __name__ == "__main__":
    import sys

    import pytest

    sys.exit(pytest.main(["-v", __file__]))
