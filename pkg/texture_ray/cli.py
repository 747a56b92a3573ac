import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ray import logger
from ray.util.annotations import PublicAPI

from texture_ray.callback import CheckpointCallback, LoggingCallback
from texture_ray.dataset import (
    IMAGES_DIR,
    LABELS_CSV,
    Dataset,
    DatasetIngestionError,
    LabelValidationError,
    describe,
    export_dataset,
    load_dataset,
    load_label_map,
    stratified_split,
)
from texture_ray.experiment import (
    CHECKPOINTS_DIR,
    run_comparison,
    run_seeds,
    write_comparison,
    write_run_report,
)
from texture_ray.main import TrainConfig, TrainingDivergedError, train
from texture_ray.model import ClassifierSpec, PretrainedWeightsUnavailable
from texture_ray.synthetic import MIN_SYNTHETIC_SIZE, generate_synthetic_textures
from texture_ray.util import ENV_PREFIX, _get_environ

MODE_STANDARD = "standard"
MODE_PATCH_SHUFFLE = "patch-shuffle"
MODE_COMPARE = "compare"
MODE_SYNTH = "synth"
MODES = (MODE_STANDARD, MODE_PATCH_SHUFFLE, MODE_COMPARE, MODE_SYNTH)

RUN_LOG = "run.log"
MANIFEST_FILE = "manifest.json"
REPORT_FILE = "report.json"

EXIT_OK = 0
EXIT_DATA_ERROR = 1
EXIT_USAGE = 2


@PublicAPI(stability="beta")
@dataclass
class ExperimentManifest:
    """Everything needed to reproduce one CLI invocation.

    Args:
        mode: One of ``standard``, ``patch-shuffle``, ``compare``, ``synth``.
        config: Training config. ``patch_shuffle_enabled`` is set by the
            mode.
        out_dir: Output directory for all artifacts.
        data_dir: Image directory, or a directory holding ``images/`` and
            ``labels.csv``.
        labels_csv: Label map. Defaults to ``<data_dir>/labels.csv``.
        synthetic: Use generated synthetic textures instead of files.
        n_per_class: Synthetic images per class.
        synthetic_size: Synthetic image side length.
        seeds: Repeat a comparison for each of these seeds.
        concurrent: Run both comparison arms as concurrent Ray tasks.
        save_checkpoints: Write final weights of every run.
        plot_formats: Formats of the accuracy curve plot.
    """

    mode: str
    config: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "texture_ray_out"
    data_dir: Optional[str] = None
    labels_csv: Optional[str] = None
    synthetic: bool = False
    n_per_class: int = 100
    synthetic_size: int = 64
    seeds: Optional[List[int]] = None
    concurrent: bool = False
    save_checkpoints: bool = True
    plot_formats: Tuple[str, ...] = ("png", "svg")

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"`mode` must be one of {MODES}, got `{self.mode}`.")
        if self.mode != MODE_SYNTH and not self.synthetic and not self.data_dir:
            raise ValueError(
                "No data source given."
                "\nFIX THIS by passing `--data-dir` or `--synthetic`."
            )
        if self.n_per_class < 1:
            raise ValueError(
                f"`n_per_class` must be at least 1, got {self.n_per_class}."
            )
        if self.synthetic_size < MIN_SYNTHETIC_SIZE:
            raise ValueError(
                f"`synthetic_size` must be at least {MIN_SYNTHETIC_SIZE}, "
                f"got {self.synthetic_size}."
            )
        if self.seeds is not None and self.mode != MODE_COMPARE:
            raise ValueError("`seeds` is only supported in compare mode.")
        self.config = dataclasses.replace(
            self.config, patch_shuffle_enabled=self.mode == MODE_PATCH_SHUFFLE
        )

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data["config"] = self.config.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentManifest":
        data = dict(data)
        data["config"] = TrainConfig.from_dict(data["config"])
        data["plot_formats"] = tuple(data.get("plot_formats", ("png",)))
        return cls(**data)


def _resolve_data_paths(manifest: ExperimentManifest) -> Tuple[str, str]:
    data_dir = manifest.data_dir
    nested = os.path.join(data_dir, IMAGES_DIR)
    image_dir = nested if os.path.isdir(nested) else data_dir
    labels_csv = manifest.labels_csv or os.path.join(data_dir, LABELS_CSV)
    return image_dir, labels_csv


def load_manifest_data(manifest: ExperimentManifest) -> Dataset:
    if manifest.synthetic or manifest.mode == MODE_SYNTH:
        size = (manifest.synthetic_size, manifest.synthetic_size)
        return generate_synthetic_textures(
            manifest.n_per_class, size, manifest.config.seed
        )
    image_dir, labels_csv = _resolve_data_paths(manifest)
    return load_dataset(image_dir, load_label_map(labels_csv))


def _write_manifest(manifest: ExperimentManifest):
    with open(os.path.join(manifest.out_dir, MANIFEST_FILE), "wt") as fp:
        json.dump(manifest.to_dict(), fp, indent=2)


def _run_single(manifest: ExperimentManifest, dataset: Dataset):
    config = manifest.config
    train_set, test_set = stratified_split(dataset, config.train_fraction, config.seed)
    callbacks = [LoggingCallback(name=manifest.mode, verbose=config.verbose)]
    if manifest.save_checkpoints:
        callbacks.append(
            CheckpointCallback(
                os.path.join(manifest.out_dir, CHECKPOINTS_DIR, manifest.mode)
            )
        )
    report = train(config, train_set, test_set, callbacks=callbacks, name=manifest.mode)
    path = write_run_report(report, manifest.out_dir, REPORT_FILE)
    logger.info(f"[TextureRay] Wrote run report to {path}.")


def _run_compare(manifest: ExperimentManifest, dataset: Dataset):
    config = manifest.config
    if manifest.seeds:
        _, summary = run_seeds(
            config,
            dataset,
            manifest.seeds,
            concurrent=manifest.concurrent,
            out_dir=manifest.out_dir,
            save_checkpoints=manifest.save_checkpoints,
            plot_formats=manifest.plot_formats,
        )
        experimental = summary["experimental"]["average_accuracy"]["mean"]
        control = summary["control"]["average_accuracy"]["mean"]
        logger.info(
            f"[TextureRay] Average accuracy over {summary['num_runs']} seeds: "
            f"experimental {100 * experimental:.2f}%, control {100 * control:.2f}%."
        )
        return

    train_set, test_set = stratified_split(dataset, config.train_fraction, config.seed)
    comparison = run_comparison(
        config,
        train_set,
        test_set,
        concurrent=manifest.concurrent,
        checkpoint_dir=(
            os.path.join(manifest.out_dir, CHECKPOINTS_DIR)
            if manifest.save_checkpoints
            else None
        ),
    )
    write_comparison(comparison, manifest.out_dir, plot_formats=manifest.plot_formats)
    logger.info("[TextureRay] Comparison:\n" + comparison.render_table())


@PublicAPI(stability="beta")
def run(manifest: ExperimentManifest) -> int:
    """Run an experiment and write its artifacts under ``manifest.out_dir``.

    Returns:
        Process exit code: 0 on success, 1 on data or training errors.
    """
    os.makedirs(manifest.out_dir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(manifest.out_dir, RUN_LOG), mode="w")
    handler.setLevel(logging.INFO)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    logger.addHandler(handler)
    try:
        _write_manifest(manifest)
        logger.info(
            f"[TextureRay] Mode `{manifest.mode}` with config "
            f"{json.dumps(manifest.config.to_dict())}."
        )
        dataset = load_manifest_data(manifest)
        logger.info(f"[TextureRay] {describe(dataset, 'dataset')}.")

        if manifest.mode == MODE_SYNTH:
            export_dataset(dataset, manifest.out_dir)
        elif manifest.mode == MODE_COMPARE:
            _run_compare(manifest, dataset)
        else:
            _run_single(manifest, dataset)
    except (
        DatasetIngestionError,
        LabelValidationError,
        PretrainedWeightsUnavailable,
        TrainingDivergedError,
        ValueError,
    ) as exc:
        logger.error(f"[TextureRay] {type(exc).__name__}: {exc}")
        return EXIT_DATA_ERROR
    finally:
        logger.removeHandler(handler)
        handler.close()
    return EXIT_OK


def _env_default(name: str, default: Any) -> Any:
    try:
        return _get_environ(name, default)
    except ValueError:
        raise ValueError(
            f"Could not parse environment variable `{ENV_PREFIX}{name}` "
            f"as {type(default).__name__}."
        ) from None


def _seed_list(value: str) -> List[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"`{value}` is not a comma-separated list of integers."
        ) from None


def build_parser() -> argparse.ArgumentParser:
    defaults = TrainConfig()
    parser = argparse.ArgumentParser(
        prog="texture-ray",
        description="Train texture classifiers with and without "
        "patch-and-shuffle preprocessing and compare them. Every flag "
        f"can also be set as an environment variable with the "
        f"`{ENV_PREFIX}` prefix, e.g. `{ENV_PREFIX}EPOCHS`.",
    )
    parser.add_argument("mode", choices=MODES, help="Experiment mode.")

    data = parser.add_argument_group("data")
    data.add_argument(
        "--data-dir",
        type=str,
        default=_env_default("DATA_DIR", None),
        help="Image directory, or directory holding images/ and labels.csv.",
    )
    data.add_argument(
        "--labels-csv",
        type=str,
        default=_env_default("LABELS_CSV", None),
        help="CSV with `filename,label` columns. Defaults to "
        "<data-dir>/labels.csv.",
    )
    data.add_argument(
        "--synthetic",
        action="store_true",
        default=_env_default("SYNTHETIC", False),
        help="Use generated synthetic texture windows.",
    )
    data.add_argument(
        "--n-per-class", type=int, default=_env_default("N_PER_CLASS", 100)
    )
    data.add_argument(
        "--synthetic-size", type=int, default=_env_default("SYNTHETIC_SIZE", 64)
    )
    data.add_argument(
        "--out",
        type=str,
        default=_env_default("OUT", "texture_ray_out"),
        help="Output directory.",
    )

    training = parser.add_argument_group("training")
    training.add_argument(
        "--epochs", type=int, default=_env_default("EPOCHS", defaults.epochs)
    )
    training.add_argument(
        "--lr", type=float, default=_env_default("LR", defaults.learning_rate)
    )
    training.add_argument(
        "--weight-decay",
        type=float,
        default=_env_default("WEIGHT_DECAY", defaults.weight_decay),
    )
    training.add_argument(
        "--patch-size",
        type=int,
        default=_env_default("PATCH_SIZE", defaults.patch_size),
        help="Patch side length in pixels of the network input.",
    )
    training.add_argument(
        "--split",
        type=float,
        default=_env_default("SPLIT", defaults.train_fraction),
        help="Training fraction per class.",
    )
    training.add_argument(
        "--batch-size",
        type=int,
        default=_env_default("BATCH_SIZE", defaults.batch_size),
    )
    training.add_argument(
        "--seed", type=int, default=_env_default("SEED", defaults.seed)
    )
    training.add_argument(
        "--image-size",
        type=int,
        default=_env_default("IMAGE_SIZE", defaults.image_size),
    )
    training.add_argument(
        "--static-expansion",
        action="store_true",
        default=_env_default("STATIC_EXPANSION", False),
        help="Materialize the augmented dataset up front.",
    )
    training.add_argument(
        "--expansion-factor",
        type=int,
        default=_env_default(
            "EXPANSION_FACTOR", defaults.augment.expansion_factor
        ),
    )
    training.add_argument(
        "--decoupled-weight-decay",
        action="store_true",
        default=_env_default("DECOUPLED_WEIGHT_DECAY", False),
        help="Use AdamW instead of Adam with L2 weight decay.",
    )

    model = parser.add_argument_group("model")
    model.add_argument(
        "--backbone",
        type=str,
        default=_env_default("BACKBONE", defaults.classifier.backbone),
    )
    model.add_argument(
        "--dropout",
        type=float,
        default=_env_default("DROPOUT", defaults.classifier.dropout_p),
    )
    model.add_argument(
        "--no-pretrained",
        action="store_true",
        default=_env_default("NO_PRETRAINED", False),
        help="Start from random backbone weights.",
    )
    model.add_argument(
        "--freeze-backbone",
        action="store_true",
        default=_env_default("FREEZE_BACKBONE", False),
        help="Train the classification head only.",
    )

    execution = parser.add_argument_group("execution")
    execution.add_argument(
        "--concurrent",
        action="store_true",
        default=_env_default("CONCURRENT", False),
        help="Run both compare arms as concurrent Ray tasks.",
    )
    execution.add_argument(
        "--seeds",
        type=_seed_list,
        default=_env_default("SEEDS", None),
        help="Comma-separated seeds; repeats the comparison per seed.",
    )
    execution.add_argument(
        "--no-checkpoints",
        action="store_true",
        default=_env_default("NO_CHECKPOINTS", False),
    )
    execution.add_argument(
        "--quiet", action="store_true", default=_env_default("QUIET", False)
    )
    return parser


def manifest_from_args(args: argparse.Namespace) -> ExperimentManifest:
    augment = dataclasses.replace(
        TrainConfig().augment, expansion_factor=args.expansion_factor
    )
    config = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        patch_size=args.patch_size,
        train_fraction=args.split,
        batch_size=args.batch_size,
        seed=args.seed,
        image_size=args.image_size,
        static_expansion=args.static_expansion,
        decoupled_weight_decay=args.decoupled_weight_decay,
        augment=augment,
        classifier=ClassifierSpec(
            backbone=args.backbone,
            dropout_p=args.dropout,
            pretrained=not args.no_pretrained,
            freeze_backbone=args.freeze_backbone,
        ),
        verbose=not args.quiet,
    )
    return ExperimentManifest(
        mode=args.mode,
        config=config,
        out_dir=args.out,
        data_dir=args.data_dir,
        labels_csv=args.labels_csv,
        synthetic=args.synthetic,
        n_per_class=args.n_per_class,
        synthetic_size=args.synthetic_size,
        seeds=args.seeds,
        concurrent=args.concurrent,
        save_checkpoints=not args.no_checkpoints,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        parser = build_parser()
    except ValueError as exc:
        print(f"texture-ray: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    args = parser.parse_args(argv)
    try:
        manifest = manifest_from_args(args)
    except ValueError as exc:
        parser.error(str(exc))
    return run(manifest)


if __name__ == "__main__":
    sys.exit(main())
