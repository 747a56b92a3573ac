import json
import math
import os
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from ray import logger
from ray.util.annotations import DeveloperAPI, PublicAPI

from texture_ray.dataset import NUM_CLASSES, ClassLabel

if TYPE_CHECKING:
    from texture_ray.main import EpochMetrics, RunReport

OVERALL_ROW = "Overall Accuracy (%)"
AVERAGE_ROW = "Average Accuracy (%)"
EXPERIMENTAL_COLUMN = "Patch-and-Shuffle"
CONTROL_COLUMN = "Standard"

EXP_WINS = "experimental>control"

COMPARISON_TXT = "comparison.txt"
COMPARISON_CSV = "comparison.csv"
COMPARISON_JSON = "comparison.json"
CURVES_FILE = "accuracy_curves"


def class_row_name(label: ClassLabel) -> str:
    return f'"{label.label_name.capitalize()}" Class Accuracy (%)'


def _as_index(label) -> int:
    return label.index if isinstance(label, ClassLabel) else int(label)


@PublicAPI(stability="beta")
def confusion_matrix(
    predictions: Sequence[ClassLabel], truths: Sequence[ClassLabel]
) -> np.ndarray:
    """4x4 count matrix; entry ``[t][p]`` counts truth ``t`` predicted ``p``."""
    if len(predictions) != len(truths):
        raise ValueError(
            f"Got {len(predictions)} predictions for {len(truths)} labels."
        )
    if not len(truths):
        raise ValueError("Cannot build a confusion matrix from zero samples.")
    matrix = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(
        matrix,
        (
            np.fromiter((_as_index(t) for t in truths), dtype=np.int64),
            np.fromiter((_as_index(p) for p in predictions), dtype=np.int64),
        ),
        1,
    )
    return matrix


@PublicAPI(stability="beta")
def overall_accuracy(confusion: np.ndarray) -> float:
    confusion = np.asarray(confusion)
    total = confusion.sum()
    if total <= 0:
        raise ValueError("Overall accuracy is undefined for an empty matrix.")
    return float(np.trace(confusion) / total)


def _ratio_per_class(
    numerators: np.ndarray, denominators: np.ndarray
) -> Dict[ClassLabel, Optional[float]]:
    return {
        label: (
            float(numerators[label.index] / denominators[label.index])
            if denominators[label.index] > 0
            else None
        )
        for label in ClassLabel
    }


@PublicAPI(stability="beta")
def per_class_accuracy(
    confusion: np.ndarray, warn: bool = True
) -> Dict[ClassLabel, Optional[float]]:
    """Recall per true class. Classes absent from the matrix map to None."""
    confusion = np.asarray(confusion)
    accuracies = _ratio_per_class(np.diag(confusion), confusion.sum(axis=1))
    undefined = [label.label_name for label, acc in accuracies.items() if acc is None]
    if warn and undefined:
        warnings.warn(
            f"No test samples for class(es) {undefined}; their accuracy is "
            f"undefined and excluded from reporting."
        )
    return accuracies


@PublicAPI(stability="beta")
def per_class_precision(confusion: np.ndarray) -> Dict[ClassLabel, Optional[float]]:
    confusion = np.asarray(confusion)
    return _ratio_per_class(np.diag(confusion), confusion.sum(axis=0))


@PublicAPI(stability="beta")
def per_class_f1(confusion: np.ndarray) -> Dict[ClassLabel, Optional[float]]:
    recall = per_class_accuracy(confusion, warn=False)
    precision = per_class_precision(confusion)
    f1 = {}
    for label in ClassLabel:
        r, p = recall[label], precision[label]
        if r is None or p is None:
            f1[label] = None
        elif r + p == 0:
            f1[label] = 0.0
        else:
            f1[label] = 2 * p * r / (p + r)
    return f1


def _require_epochs(report: "RunReport"):
    if not report.epochs:
        raise ValueError(
            "The run report contains no epochs."
            "\nFIX THIS by training for at least one epoch."
        )


@PublicAPI(stability="beta")
def best_iteration(report: "RunReport") -> "EpochMetrics":
    """Epoch with the highest test accuracy; ties go to the earliest."""
    _require_epochs(report)
    best = report.epochs[0]
    for metrics in report.epochs[1:]:
        if metrics.test_overall_accuracy > best.test_overall_accuracy:
            best = metrics
    return best


@PublicAPI(stability="beta")
def average_accuracy(report: "RunReport") -> float:
    """Mean test accuracy over all epochs of a run."""
    _require_epochs(report)
    return float(np.mean([m.test_overall_accuracy for m in report.epochs]))


def generalization_gap(report: "RunReport") -> Optional[float]:
    """Mean of ``train_accuracy - test_accuracy`` over epochs."""
    _require_epochs(report)
    gaps = [
        m.train_accuracy - m.test_overall_accuracy
        for m in report.epochs
        if m.train_accuracy is not None
    ]
    return float(np.mean(gaps)) if gaps else None


@DeveloperAPI
@dataclass
class TableRow:
    metric: str
    experimental: Optional[float]
    control: Optional[float]


@PublicAPI(stability="beta")
@dataclass
class ComparisonReport:
    """Paired control/experimental summary laid out like the results table.

    ``best_iteration_table`` holds the overall and per-class accuracies of
    each run's own best epoch, ``average_accuracy_pair`` the mean accuracy
    over epochs. Pairs are ``(experimental, control)``.
    """

    control: "RunReport"
    experimental: "RunReport"
    best_iteration_table: List[TableRow]
    average_accuracy_pair: Tuple[float, float]
    best_epoch_pair: Tuple[int, int]
    generalization_gap_pair: Tuple[Optional[float], Optional[float]] = (None, None)

    @property
    def rows(self) -> List[TableRow]:
        return self.best_iteration_table + [
            TableRow(AVERAGE_ROW, *self.average_accuracy_pair)
        ]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "Metric": row.metric,
                    EXPERIMENTAL_COLUMN: _pct(row.experimental),
                    CONTROL_COLUMN: _pct(row.control),
                }
                for row in self.rows
            ]
        )

    def render_table(self) -> str:
        lines = [
            "Comparison of Patch-and-Shuffle and Standard Classifiers",
            "",
            _format_header(_config_header(self.control)),
            "",
            self.to_frame().to_string(index=False, justify="left"),
        ]
        exp_best, ctl_best = self.best_epoch_pair
        lines += [
            "",
            f"Best iteration: epoch {exp_best} ({EXPERIMENTAL_COLUMN}), "
            f"epoch {ctl_best} ({CONTROL_COLUMN}).",
        ]
        exp_gap, ctl_gap = self.generalization_gap_pair
        if exp_gap is not None and ctl_gap is not None:
            lines.append(
                f"Mean train-test accuracy gap: {_pct(exp_gap)} "
                f"({EXPERIMENTAL_COLUMN}), {_pct(ctl_gap)} ({CONTROL_COLUMN})."
            )
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": [
                {
                    "metric": row.metric,
                    "experimental": row.experimental,
                    "control": row.control,
                }
                for row in self.rows
            ],
            "best_epoch": {
                "experimental": self.best_epoch_pair[0],
                "control": self.best_epoch_pair[1],
            },
            "generalization_gap": {
                "experimental": self.generalization_gap_pair[0],
                "control": self.generalization_gap_pair[1],
            },
            "best_epoch_metrics": {
                "experimental": best_iteration(self.experimental).to_dict(),
                "control": best_iteration(self.control).to_dict(),
            },
            "gap_direction": _gap_direction(self.average_accuracy_pair),
            "config": _config_header(self.control),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write(self, out_dir: str) -> List[str]:
        """Write the text, CSV and JSON renderings into ``out_dir``."""
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for filename, content in (
            (COMPARISON_TXT, self.render_table()),
            (COMPARISON_CSV, self.to_csv()),
            (COMPARISON_JSON, self.to_json()),
        ):
            path = os.path.join(out_dir, filename)
            with open(path, "wt") as fp:
                fp.write(content)
            paths.append(path)
        return paths


def _config_header(report: "RunReport") -> Dict[str, Any]:
    config = report.config
    return {
        "epochs": config.epochs,
        "learning_rate": config.learning_rate,
        "weight_decay": config.weight_decay,
        "weight_decay_mode": report.weight_decay_mode,
        "patch_size": config.patch_size,
        "train_fraction": config.train_fraction,
        "batch_size": config.batch_size,
        "seed": config.seed,
        "backbone": config.classifier.backbone,
    }


def _format_header(header: Dict[str, Any]) -> str:
    return " ".join(f"{key}={value}" for key, value in header.items())


def _pct(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    return f"{100.0 * value:.2f}"


def _gap_direction(pair: Tuple[float, float]) -> str:
    experimental, control = pair
    if experimental > control:
        return EXP_WINS
    if experimental < control:
        return "experimental<control"
    return "tie"


@PublicAPI(stability="beta")
def compare_runs(control: "RunReport", experimental: "RunReport") -> ComparisonReport:
    """Assemble the best-iteration and average-accuracy comparison.

    Per-class values come from each run's own best epoch.
    """
    exp_best = best_iteration(experimental)
    ctl_best = best_iteration(control)

    rows = [
        TableRow(
            OVERALL_ROW, exp_best.test_overall_accuracy, ctl_best.test_overall_accuracy
        )
    ]
    for label in ClassLabel:
        rows.append(
            TableRow(
                class_row_name(label),
                exp_best.per_class_accuracy.get(label),
                ctl_best.per_class_accuracy.get(label),
            )
        )

    return ComparisonReport(
        control=control,
        experimental=experimental,
        best_iteration_table=rows,
        average_accuracy_pair=(
            average_accuracy(experimental),
            average_accuracy(control),
        ),
        best_epoch_pair=(exp_best.epoch, ctl_best.epoch),
        generalization_gap_pair=(
            generalization_gap(experimental),
            generalization_gap(control),
        ),
    )


@PublicAPI(stability="beta")
def summarize_seeds(comparisons: Sequence[ComparisonReport]) -> Dict[str, Any]:
    """Mean and standard deviation of best/average accuracy per arm across
    repeated (multi-seed) comparisons."""
    if not comparisons:
        raise ValueError("Need at least one comparison to summarize.")

    def stats(values: List[float]) -> Dict[str, float]:
        return {
            "mean": float(np.mean(values)),
            "std": float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
            "values": [float(v) for v in values],
        }

    summary = {"num_runs": len(comparisons)}
    for index, arm in enumerate(("experimental", "control")):
        summary[arm] = {
            "best_accuracy": stats(
                [getattr(c.best_iteration_table[0], arm) for c in comparisons]
            ),
            "average_accuracy": stats(
                [c.average_accuracy_pair[index] for c in comparisons]
            ),
        }
    summary["experimental_wins"] = sum(
        1 for c in comparisons if _gap_direction(c.average_accuracy_pair) == EXP_WINS
    )
    return summary


@PublicAPI(stability="beta")
def plot_accuracy_curves(
    comparison: ComparisonReport, out_dir: str, formats: Sequence[str] = ("png",)
) -> List[str]:
    """Plot per-epoch test accuracy of both runs. Returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for report, name in (
        (comparison.experimental, EXPERIMENTAL_COLUMN),
        (comparison.control, CONTROL_COLUMN),
    ):
        epochs = [m.epoch for m in report.epochs]
        ax.plot(
            epochs, [100.0 * m.test_overall_accuracy for m in report.epochs], label=name
        )
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Test accuracy (%)")
    ax.set_ylim(0, 100)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for fmt in formats:
        path = os.path.join(out_dir, f"{CURVES_FILE}.{fmt}")
        fig.savefig(path)
        paths.append(path)
    plt.close(fig)
    logger.debug(f"[TextureRay] Wrote accuracy curves to {paths}.")
    return paths
