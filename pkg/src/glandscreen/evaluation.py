"""Confusion matrices, per-class metrics, threshold sweeps, and report rendering.

Vocabulary: the positive class is ABNORMAL (screening convention), so
``correct_abnormal`` counts actually-abnormal images predicted abnormal.
Published figures for this problem sometimes invert the true-positive /
true-negative naming; the explicit field names here avoid that trap.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .errors import EmptyMatrix, LengthMismatch


@dataclass(frozen=True)
class ConfusionMatrix:
    correct_abnormal: int  # actual abnormal, predicted abnormal
    missed_abnormal: int  # actual abnormal, predicted normal
    false_abnormal: int  # actual normal, predicted abnormal
    correct_normal: int  # actual normal, predicted normal

    def __post_init__(self) -> None:
        if min(self.correct_abnormal, self.missed_abnormal, self.false_abnormal, self.correct_normal) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.correct_abnormal + self.missed_abnormal + self.false_abnormal + self.correct_normal

    def to_dict(self) -> dict:
        return {
            "correct_abnormal": self.correct_abnormal,
            "missed_abnormal": self.missed_abnormal,
            "false_abnormal": self.false_abnormal,
            "correct_normal": self.correct_normal,
        }


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool  # some ratio was 0/0 and reported as 0

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
            "degenerate": self.degenerate,
        }


@dataclass(frozen=True)
class MetricsReport:
    abnormal: ClassMetrics
    normal: ClassMetrics
    accuracy: float

    @property
    def macro_f1(self) -> float:
        return (self.abnormal.f1 + self.normal.f1) / 2.0

    def to_dict(self) -> dict:
        return {
            "abnormal": self.abnormal.to_dict(),
            "normal": self.normal.to_dict(),
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
        }


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    cm: ConfusionMatrix
    report: MetricsReport


@dataclass(frozen=True)
class ThresholdSweep:
    points: list[SweepPoint]
    balanced_threshold: float

    def to_rows(self) -> list[dict]:
        rows = []
        for p in self.points:
            rows.append(
                {
                    "threshold": f"{p.threshold:.4f}",
                    **{k: str(v) for k, v in p.cm.to_dict().items()},
                    "precision_abnormal": f"{p.report.abnormal.precision:.6f}",
                    "recall_abnormal": f"{p.report.abnormal.recall:.6f}",
                    "f1_abnormal": f"{p.report.abnormal.f1:.6f}",
                    "precision_normal": f"{p.report.normal.precision:.6f}",
                    "recall_normal": f"{p.report.normal.recall:.6f}",
                    "f1_normal": f"{p.report.normal.f1:.6f}",
                    "accuracy": f"{p.report.accuracy:.6f}",
                }
            )
        return rows


def _norm_label(label) -> str:
    if isinstance(label, str):
        if label not in ("abnormal", "normal"):
            raise ValueError(f"unknown label {label!r}")
        return label
    return "abnormal" if int(label) == 0 else "normal"


def confusion(predicted, actual) -> ConfusionMatrix:
    """Exact cell counts from paired label sequences.

    Labels may be strings or class indices (0 = abnormal, 1 = normal).
    """
    predicted = [_norm_label(p) for p in predicted]
    actual = [_norm_label(a) for a in actual]
    if len(predicted) != len(actual):
        raise LengthMismatch(f"{len(predicted)} predictions vs {len(actual)} labels")
    ca = ma = fa = cn = 0
    for pred, act in zip(predicted, actual):
        if act == "abnormal":
            if pred == "abnormal":
                ca += 1
            else:
                ma += 1
        else:
            if pred == "abnormal":
                fa += 1
            else:
                cn += 1
    return ConfusionMatrix(ca, ma, fa, cn)


def _ratio(num: int, den: int) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def _f1(precision: float, recall: float) -> tuple[float, bool]:
    if precision + recall == 0:
        return 0.0, True
    return 2 * precision * recall / (precision + recall), False


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class precision/recall/F1 and accuracy; 0/0 ratios report as 0.

    Raises:
        EmptyMatrix: all four cells are zero.
    """
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no observations")

    p_a, deg_pa = _ratio(cm.correct_abnormal, cm.correct_abnormal + cm.false_abnormal)
    r_a, deg_ra = _ratio(cm.correct_abnormal, cm.correct_abnormal + cm.missed_abnormal)
    f1_a, deg_fa = _f1(p_a, r_a)
    p_n, deg_pn = _ratio(cm.correct_normal, cm.correct_normal + cm.missed_abnormal)
    r_n, deg_rn = _ratio(cm.correct_normal, cm.correct_normal + cm.false_abnormal)
    f1_n, deg_fn = _f1(p_n, r_n)

    return MetricsReport(
        abnormal=ClassMetrics(
            precision=p_a,
            recall=r_a,
            f1=f1_a,
            support=cm.correct_abnormal + cm.missed_abnormal,
            degenerate=deg_pa or deg_ra or deg_fa,
        ),
        normal=ClassMetrics(
            precision=p_n,
            recall=r_n,
            f1=f1_n,
            support=cm.correct_normal + cm.false_abnormal,
            degenerate=deg_pn or deg_rn or deg_fn,
        ),
        accuracy=(cm.correct_abnormal + cm.correct_normal) / cm.total,
    )


def default_grid(step: float = 0.01) -> np.ndarray:
    return np.round(np.arange(0.0, 1.0 + step / 2, step), 10)


def threshold_sweep(
    probabilities, actual, grid: np.ndarray | list[float] | None = None
) -> ThresholdSweep:
    """Confusion and metrics at each threshold of the grid.

    An image is predicted abnormal when its aggregate abnormal probability
    is >= the threshold. The balanced threshold is the grid point
    minimizing |recall_abnormal - recall_normal|, lowest threshold on ties.
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.size and (probabilities.min() < 0 or probabilities.max() > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be non-empty and strictly increasing")
    actual = [_norm_label(a) for a in actual]
    if len(actual) != probabilities.shape[0]:
        raise LengthMismatch(f"{probabilities.shape[0]} probabilities vs {len(actual)} labels")

    points = []
    best_idx = 0
    best_gap = np.inf
    for i, threshold in enumerate(grid):
        predicted = ["abnormal" if p >= threshold else "normal" for p in probabilities]
        cm = confusion(predicted, actual)
        report = metrics(cm)
        points.append(SweepPoint(float(threshold), cm, report))
        gap = abs(report.abnormal.recall - report.normal.recall)
        if gap < best_gap:
            best_gap = gap
            best_idx = i
    return ThresholdSweep(points=points, balanced_threshold=float(grid[best_idx]))


def render_reports(
    sweep: ThresholdSweep, cm: ConfusionMatrix, out_dir: Path | str
) -> dict[str, Path]:
    """Write the confusion-matrix image, threshold curves, and sweep CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "confusion": out_dir / "confusion.png",
        "curves": out_dir / "threshold_curves.png",
        "sweep": out_dir / "sweep.csv",
    }

    rows = sweep.to_rows()
    with open(paths["sweep"], "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)

    fig = Figure(figsize=(5, 4.5))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot()
    cells = np.array(
        [[cm.correct_abnormal, cm.missed_abnormal], [cm.false_abnormal, cm.correct_normal]]
    )
    ax.imshow(cells, cmap="Blues")
    for (r, c), value in np.ndenumerate(cells):
        ax.text(c, r, str(value), ha="center", va="center",
                color="white" if value > cells.max() / 2 else "black")
    ax.set_xticks([0, 1], ["pred abnormal", "pred normal"])
    ax.set_yticks([0, 1], ["actual abnormal", "actual normal"])
    ax.set_title("Confusion matrix (positive class = abnormal)")
    fig.tight_layout()
    fig.savefig(paths["confusion"])

    thresholds = [p.threshold for p in sweep.points]
    fig = Figure(figsize=(7, 4.5))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot()
    ax.plot(thresholds, [p.report.abnormal.precision for p in sweep.points], label="abnormal precision")
    ax.plot(thresholds, [p.report.abnormal.recall for p in sweep.points], label="abnormal recall")
    ax.plot(thresholds, [p.report.abnormal.f1 for p in sweep.points], label="abnormal F1")
    ax.plot(
        thresholds,
        [p.report.normal.recall for p in sweep.points],
        linestyle="--", marker="x", markevery=10, label="normal recall",
    )
    ax.axvline(sweep.balanced_threshold, color="gray", alpha=0.6,
               label=f"balanced @ {sweep.balanced_threshold:.2f}")
    ax.set_xlabel("decision threshold")
    ax.set_ylabel("metric")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower center", fontsize=8)
    fig.tight_layout()
    fig.savefig(paths["curves"])

    return paths
