import math
from abc import ABC
from typing import TYPE_CHECKING, Optional, Sequence

from ray import logger
from ray.util.annotations import DeveloperAPI, PublicAPI

from texture_ray.dataset import ClassLabel

if TYPE_CHECKING:
    from texture_ray.main import EpochMetrics, RunReport, TrainConfig
    from texture_ray.model import TextureClassifier


def _fmt(value: Optional[float]) -> str:
    if value is None or math.isnan(value):
        return "nan"
    return f"{value:.4f}"


@DeveloperAPI
def format_epoch_line(metrics: "EpochMetrics", prefix: str = "") -> str:
    """One-line epoch summary. Undefined per-class accuracies print as nan."""
    per_class = " ".join(
        f"{label.label_name}={_fmt(metrics.per_class_accuracy.get(label))}"
        for label in ClassLabel
    )
    return (
        f"{prefix}epoch={metrics.epoch} train_loss={_fmt(metrics.train_loss)} "
        f"test_acc={_fmt(metrics.test_overall_accuracy)} {per_class}"
    )


@PublicAPI(stability="beta")
class TrainingCallback(ABC):
    """Hooks executed by :func:`train <texture_ray.main.train>`.

    Callbacks run in the process that trains. With concurrent comparison
    runs each arm works on its own de-serialized copy, so state changes in
    one copy are not seen by the other.
    """

    def on_train_begin(
        self, config: "TrainConfig", classifier: "TextureClassifier", *args, **kwargs
    ):
        pass

    def on_epoch_end(
        self,
        metrics: "EpochMetrics",
        classifier: "TextureClassifier",
        *args,
        **kwargs,
    ):
        pass

    def on_train_end(
        self, report: "RunReport", classifier: "TextureClassifier", *args, **kwargs
    ):
        pass


@DeveloperAPI
class CallbackContainer:
    def __init__(self, callbacks: Optional[Sequence[TrainingCallback]]):
        self.callbacks = list(callbacks or [])

    def on_train_begin(self, config, classifier, *args, **kwargs):
        for callback in self.callbacks:
            callback.on_train_begin(config, classifier, *args, **kwargs)

    def on_epoch_end(self, metrics, classifier, *args, **kwargs):
        for callback in self.callbacks:
            callback.on_epoch_end(metrics, classifier, *args, **kwargs)

    def on_train_end(self, report, classifier, *args, **kwargs):
        for callback in self.callbacks:
            callback.on_train_end(report, classifier, *args, **kwargs)


@PublicAPI(stability="beta")
class LoggingCallback(TrainingCallback):
    """Log one line per epoch.

    Args:
        name: Run name put in front of every line, e.g. ``control``.
        verbose: Log at INFO level. Otherwise DEBUG.
    """

    def __init__(self, name: Optional[str] = None, verbose: bool = True):
        self.name = name
        self.verbose = verbose

    @property
    def _prefix(self) -> str:
        return f"[TextureRay] [{self.name}] " if self.name else "[TextureRay] "

    def _log(self, message: str):
        maybe_log = logger.info if self.verbose else logger.debug
        maybe_log(message)

    def on_train_begin(self, config, classifier, *args, **kwargs):
        self._log(
            f"{self._prefix}Training {classifier.spec.backbone} for "
            f"{config.epochs} epochs (patch shuffle "
            f"{'on' if config.patch_shuffle_enabled else 'off'}, "
            f"seed {config.seed})."
        )

    def on_epoch_end(self, metrics, classifier, *args, **kwargs):
        self._log(format_epoch_line(metrics, prefix=self._prefix))

    def on_train_end(self, report, classifier, *args, **kwargs):
        self._log(
            f"{self._prefix}Finished training in "
            f"{report.wall_time_seconds:.2f} seconds."
        )


@PublicAPI(stability="beta")
class CheckpointCallback(TrainingCallback):
    """Save the final weights to ``directory`` when training ends."""

    def __init__(self, directory: str):
        self.directory = directory

    def on_train_end(self, report, classifier, *args, **kwargs):
        from texture_ray.model import save_classifier

        save_classifier(classifier, self.directory, seed=report.config.seed)
        logger.debug(f"[TextureRay] Saved checkpoint to {self.directory}.")
