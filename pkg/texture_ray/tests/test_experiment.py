import json
import logging
import os
import shutil
import tempfile
import unittest
from unittest import mock

import numpy as np
import pytest

from texture_ray.callback import CheckpointCallback, LoggingCallback
from texture_ray.dataset import stratified_split
from texture_ray.evaluation import (
    COMPARISON_CSV,
    COMPARISON_JSON,
    COMPARISON_TXT,
    CURVES_FILE,
    EXP_WINS,
    best_iteration,
)
from texture_ray.experiment import (
    CHECKPOINTS_DIR,
    CONTROL,
    EXPERIMENTAL,
    SEEDS_SUMMARY,
    ArmMismatchError,
    _train_arm,
    arm_configs,
    run_comparison,
    run_seeds,
    write_comparison,
)
from texture_ray.main import RunReport, train
from texture_ray.synthetic import generate_synthetic_textures
from texture_ray.tests.utils import balanced_labels, make_dataset, tiny_config


class ArmConfigsTest(unittest.TestCase):
    def testOnlyShuffleFlagDiffers(self):
        base = tiny_config(seed=5, patch_shuffle_enabled=True)
        control, experimental = arm_configs(base)
        self.assertFalse(control.patch_shuffle_enabled)
        self.assertTrue(experimental.patch_shuffle_enabled)

        control_fields = control.to_dict()
        experimental_fields = experimental.to_dict()
        differing = {
            key
            for key in control_fields
            if control_fields[key] != experimental_fields[key]
        }
        self.assertEqual(differing, {"patch_shuffle_enabled"})


class TrainArmTest(unittest.TestCase):
    def _callbacks(self, **kwargs):
        with mock.patch("texture_ray.experiment.train") as train_mock:
            _train_arm(tiny_config(), [], [], CONTROL, **kwargs)
        return train_mock.call_args.kwargs["callbacks"]

    def testLogsEpochsByDefault(self):
        callbacks = self._callbacks()
        self.assertEqual([type(c) for c in callbacks], [LoggingCallback])

    def testWorkerArmsSkipEpochLogging(self):
        callbacks = self._callbacks(log_epochs=False, checkpoint_dir="ckpt")
        self.assertEqual([type(c) for c in callbacks], [CheckpointCallback])


class RunComparisonTest(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        dataset = make_dataset(balanced_labels(4), size=64)
        self.train_set, self.test_set = stratified_split(dataset, 0.5, seed=0)

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def testSequentialComparison(self):
        comparison = run_comparison(
            tiny_config(epochs=2), self.train_set, self.test_set
        )
        self.assertEqual(comparison.control.name, CONTROL)
        self.assertEqual(comparison.experimental.name, EXPERIMENTAL)
        self.assertFalse(comparison.control.config.patch_shuffle_enabled)
        self.assertTrue(comparison.experimental.config.patch_shuffle_enabled)
        self.assertEqual(
            comparison.control.split_checksum, comparison.experimental.split_checksum
        )
        self.assertEqual(len(comparison.control.epochs), 2)
        self.assertEqual(len(comparison.best_iteration_table), 5)

    def testSplitMismatchIsFatal(self):
        def train_with_other_split(config, train_set, test_set, **kwargs):
            report = train(config, train_set, test_set, **kwargs)
            if config.patch_shuffle_enabled:
                report.split_checksum = "f" * 64
            return report

        with mock.patch(
            "texture_ray.experiment.train", side_effect=train_with_other_split
        ):
            with self.assertRaises(ArmMismatchError):
                run_comparison(tiny_config(epochs=1), self.train_set, self.test_set)

    def testCheckpointsAndArtifacts(self):
        checkpoint_dir = os.path.join(self.tmpdir, CHECKPOINTS_DIR)
        comparison = run_comparison(
            tiny_config(epochs=1),
            self.train_set,
            self.test_set,
            checkpoint_dir=checkpoint_dir,
        )
        for arm in (CONTROL, EXPERIMENTAL):
            self.assertTrue(
                os.path.exists(os.path.join(checkpoint_dir, arm, "model.pt"))
            )

        out_dir = os.path.join(self.tmpdir, "out")
        write_comparison(comparison, out_dir, plot_formats=("png", "svg"))
        for filename in (
            f"{CONTROL}.json",
            f"{EXPERIMENTAL}.json",
            COMPARISON_TXT,
            COMPARISON_CSV,
            COMPARISON_JSON,
            f"{CURVES_FILE}.png",
            f"{CURVES_FILE}.svg",
        ):
            self.assertTrue(
                os.path.exists(os.path.join(out_dir, filename)), msg=filename
            )

        restored = RunReport.load(os.path.join(out_dir, f"{CONTROL}.json"))
        self.assertEqual(restored.weights_checksum, comparison.control.weights_checksum)


class RunSeedsTest(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self.dataset = make_dataset(balanced_labels(4), size=64)

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def testTwoSeeds(self):
        comparisons, summary = run_seeds(
            tiny_config(epochs=1),
            self.dataset,
            seeds=[0, 1],
            out_dir=self.tmpdir,
            plot_formats=(),
        )
        self.assertEqual(len(comparisons), 2)
        self.assertEqual([c.control.config.seed for c in comparisons], [0, 1])
        self.assertEqual(summary["num_runs"], 2)
        self.assertEqual(summary["seeds"], [0, 1])
        self.assertEqual(
            len(summary["experimental"]["best_accuracy"]["values"]), 2
        )

        with open(os.path.join(self.tmpdir, SEEDS_SUMMARY), "rt") as fp:
            self.assertEqual(json.load(fp)["num_runs"], 2)
        for seed in (0, 1):
            self.assertTrue(
                os.path.exists(
                    os.path.join(self.tmpdir, f"seed_{seed}", COMPARISON_JSON)
                )
            )

    def testInvalidSeeds(self):
        with self.assertRaises(ValueError):
            run_seeds(tiny_config(), self.dataset, seeds=[])
        with self.assertRaises(ValueError):
            run_seeds(tiny_config(), self.dataset, seeds=[1, 1])


class SyntheticComparisonTest(unittest.TestCase):
    def testExperimentalArmLearnsSyntheticTextures(self):
        dataset = generate_synthetic_textures(100, (64, 64), seed=0)
        train_set, test_set = stratified_split(dataset, 0.8, seed=0)
        comparison = run_comparison(
            tiny_config(epochs=5, batch_size=16), train_set, test_set
        )
        best = best_iteration(comparison.experimental)
        self.assertGreaterEqual(best.test_overall_accuracy, 0.9)

        self.assertEqual(len(comparison.rows), 6)
        text = comparison.render_table()
        for row in comparison.rows:
            self.assertIn(row.metric, text)
        self.assertIn(
            comparison.to_dict()["gap_direction"],
            (EXP_WINS, "experimental<control", "tie"),
        )


@pytest.mark.usefixtures("ray_start_local")
class ConcurrentComparisonTest(unittest.TestCase):
    def setUp(self):
        dataset = make_dataset(balanced_labels(4), size=64)
        self.train_set, self.test_set = stratified_split(dataset, 0.5, seed=0)

    def testConcurrentMatchesSequential(self):
        config = tiny_config(epochs=1)
        sequential = run_comparison(config, self.train_set, self.test_set)
        with self.ray_start_local(), self.assertLogs("ray", logging.DEBUG) as logs:
            concurrent = run_comparison(
                config, self.train_set, self.test_set, concurrent=True
            )
        for arm in (CONTROL, EXPERIMENTAL):
            epoch_lines = [line for line in logs.output if f"[{arm}] epoch=1" in line]
            self.assertEqual(len(epoch_lines), 1)
        self.assertEqual(
            concurrent.control.split_checksum, sequential.control.split_checksum
        )
        np.testing.assert_allclose(
            [m.train_loss for m in concurrent.experimental.epochs],
            [m.train_loss for m in sequential.experimental.epochs],
            rtol=1e-4,
        )


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main(["-v", __file__]))
