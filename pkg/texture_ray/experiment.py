"""Control/experimental pairing of training runs.

Both arms of a comparison consume the same split and the same base seed,
so initialization, batch order and augmentation draws are identical. They
differ only in whether the patch-and-shuffle stage runs.
"""
import dataclasses
import json
import os
import time
from typing import Any, Dict, List, Optional, Sequence, Tuple

import ray
from ray import logger
from ray.util.annotations import DeveloperAPI, PublicAPI

from texture_ray.callback import CheckpointCallback, LoggingCallback
from texture_ray.dataset import Dataset, stratified_split
from texture_ray.evaluation import (
    ComparisonReport,
    compare_runs,
    plot_accuracy_curves,
    summarize_seeds,
)
from texture_ray.main import RunReport, TrainConfig, train
from texture_ray.util import ENV

CONTROL = "control"
EXPERIMENTAL = "experimental"
CHECKPOINTS_DIR = "checkpoints"
SEEDS_SUMMARY = "seeds_summary.json"


class ArmMismatchError(RuntimeError):
    """Raised when the two arms of a comparison did not see the same split."""

    pass


@DeveloperAPI
def arm_configs(base_config: TrainConfig) -> Tuple[TrainConfig, TrainConfig]:
    """``(control, experimental)`` configs derived from one base config."""
    return (
        dataclasses.replace(base_config, patch_shuffle_enabled=False),
        dataclasses.replace(base_config, patch_shuffle_enabled=True),
    )


def _train_arm(
    config: TrainConfig,
    train_set: Dataset,
    test_set: Dataset,
    name: str,
    checkpoint_dir: Optional[str] = None,
    log_epochs: bool = True,
) -> RunReport:
    callbacks = []
    if log_epochs:
        callbacks.append(LoggingCallback(name=name, verbose=config.verbose))
    if checkpoint_dir:
        callbacks.append(CheckpointCallback(os.path.join(checkpoint_dir, name)))
    return train(config, train_set, test_set, callbacks=callbacks, name=name)


def _cpus_per_arm(num_arms: int) -> int:
    available = int(ray.available_resources().get("CPU", num_arms))
    return max(1, available // num_arms)


def _run_concurrently(
    configs: Sequence[Tuple[str, TrainConfig]],
    train_set: Dataset,
    test_set: Dataset,
    checkpoint_dir: Optional[str],
) -> List[RunReport]:
    if not ray.is_initialized():
        ray.init()

    train_ref = ray.put(train_set)
    test_ref = ray.put(test_set)

    remote_train = ray.remote(_train_arm).options(
        num_cpus=_cpus_per_arm(len(configs))
    )
    futures = [
        remote_train.remote(
            config, train_ref, test_ref, name, checkpoint_dir, log_epochs=False
        )
        for name, config in configs
    ]

    start_wait = time.time()
    last_status = start_wait
    not_ready = futures
    while not_ready:
        _, not_ready = ray.wait(not_ready, num_returns=len(not_ready), timeout=1)
        if not_ready and time.time() >= last_status + ENV.STATUS_FREQUENCY_S:
            wait_time = time.time() - start_wait
            logger.info(
                f"[TextureRay] Waiting for {len(not_ready)} of {len(futures)} "
                f"runs to finish ({wait_time:.0f} seconds passed)."
            )
            last_status = time.time()

    reports = ray.get(futures)
    # Workers skip per-epoch logging; the driver logs each arm once, in order.
    for report in reports:
        callback = LoggingCallback(name=report.name, verbose=report.config.verbose)
        for metrics in report.epochs:
            callback.on_epoch_end(metrics, classifier=None)
        callback.on_train_end(report, classifier=None)
    return reports


@PublicAPI(stability="beta")
def run_comparison(
    base_config: TrainConfig,
    train_set: Dataset,
    test_set: Dataset,
    concurrent: bool = False,
    checkpoint_dir: Optional[str] = None,
) -> ComparisonReport:
    """Train the control and experimental arms and compare them.

    Args:
        base_config: Shared config. Its ``patch_shuffle_enabled`` is
            overridden per arm.
        train_set: Training data shared by both arms.
        test_set: Test data shared by both arms.
        concurrent: Run both arms as concurrent Ray tasks. Defaults to
            sequential runs in this process.
        checkpoint_dir: If set, final weights of each arm are saved to
            ``<checkpoint_dir>/<arm>``.

    Returns:
        A ``ComparisonReport`` with the experimental column first.
    """
    control_config, experimental_config = arm_configs(base_config)
    configs = [(CONTROL, control_config), (EXPERIMENTAL, experimental_config)]

    if concurrent:
        control, experimental = _run_concurrently(
            configs, train_set, test_set, checkpoint_dir
        )
    else:
        control, experimental = [
            _train_arm(config, train_set, test_set, name, checkpoint_dir)
            for name, config in configs
        ]

    if control.split_checksum != experimental.split_checksum:
        raise ArmMismatchError(
            f"Control and experimental runs used different splits "
            f"({control.split_checksum} vs. {experimental.split_checksum})."
        )
    logger.info(
        f"[TextureRay] Both arms trained on split {control.split_checksum[:16]}."
    )
    return compare_runs(control, experimental)


@DeveloperAPI
def write_run_report(report: RunReport, out_dir: str, filename: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, filename)
    report.save(path)
    return path


@PublicAPI(stability="beta")
def write_comparison(
    comparison: ComparisonReport, out_dir: str, plot_formats: Sequence[str] = ("png",)
) -> List[str]:
    """Write both run reports, the comparison in all formats and the plot."""
    paths = [
        write_run_report(comparison.control, out_dir, f"{CONTROL}.json"),
        write_run_report(comparison.experimental, out_dir, f"{EXPERIMENTAL}.json"),
    ]
    paths += comparison.write(out_dir)
    if plot_formats:
        paths += plot_accuracy_curves(comparison, out_dir, formats=plot_formats)
    return paths


@PublicAPI(stability="beta")
def run_seeds(
    base_config: TrainConfig,
    dataset: Dataset,
    seeds: Sequence[int],
    concurrent: bool = False,
    out_dir: Optional[str] = None,
    save_checkpoints: bool = False,
    plot_formats: Sequence[str] = ("png",),
) -> Tuple[List[ComparisonReport], Dict[str, Any]]:
    """Repeat a comparison for several seeds.

    Every seed re-splits the dataset and re-seeds both arms. With
    ``out_dir`` each comparison is written to ``<out_dir>/seed_<seed>`` and
    the summary to ``<out_dir>/seeds_summary.json``.

    Returns:
        ``(comparisons, summary)``, summary as from
        :func:`summarize_seeds <texture_ray.evaluation.summarize_seeds>`.
    """
    if not seeds:
        raise ValueError("`seeds` must contain at least one seed.")
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"`seeds` contains duplicates: {list(seeds)}.")

    comparisons = []
    for seed in seeds:
        config = dataclasses.replace(base_config, seed=seed)
        train_set, test_set = stratified_split(dataset, config.train_fraction, seed)
        seed_dir = os.path.join(out_dir, f"seed_{seed}") if out_dir else None
        checkpoint_dir = (
            os.path.join(seed_dir, CHECKPOINTS_DIR)
            if seed_dir and save_checkpoints
            else None
        )
        comparison = run_comparison(
            config,
            train_set,
            test_set,
            concurrent=concurrent,
            checkpoint_dir=checkpoint_dir,
        )
        if seed_dir:
            write_comparison(comparison, seed_dir, plot_formats=plot_formats)
        comparisons.append(comparison)

    summary = summarize_seeds(comparisons)
    summary["seeds"] = list(seeds)
    if out_dir:
        with open(os.path.join(out_dir, SEEDS_SUMMARY), "wt") as fp:
            json.dump(summary, fp, indent=2)
    return comparisons, summary
