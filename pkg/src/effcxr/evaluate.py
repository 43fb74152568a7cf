"""Confusion matrices, screening metrics, and side-by-side comparisons.

Metric definitions over the three-class confusion matrix (rows = true):

    accuracy            = (TP_Normal + TP_Pneumonia + TP_COVID) / total
    COVID sensitivity   = TP_COVID / (TP_COVID + FN_COVID)
    COVID precision     = TP_COVID / (TP_COVID + FP_COVID)

Ratios with zero denominators are reported as undefined, never coerced to 0
or 1.  Percentages render with one decimal place.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .classify import (
    CLASSES,
    FlatModel,
    HierModel,
    LEAF_CLASSES,
    ROOT_CLASSES,
    predict_flat,
    predict_hier,
)
from .cost import CostReport
from .data import ImageLoader


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true label, columns = predicted label."""

    labels: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        arr = np.asarray(self.counts, dtype=np.int64)
        if arr.shape != (n, n):
            raise ValueError(f"counts must be {n}x{n}; got {arr.shape}")
        if (arr < 0).any():
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", arr)

    @classmethod
    def from_pairs(cls, true_labels, pred_labels, labels=CLASSES) -> "ConfusionMatrix":
        index = {label: i for i, label in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in zip(true_labels, pred_labels, strict=True):
            counts[index[t], index[p]] += 1
        return cls(labels=tuple(labels), counts=counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    def row(self, label: str) -> np.ndarray:
        return self.counts[self.labels.index(label)]

    def column(self, label: str) -> np.ndarray:
        return self.counts[:, self.labels.index(label)]

    def merged(self, mapping: dict[str, str], labels: tuple[str, ...]) -> "ConfusionMatrix":
        """Collapse classes (e.g. COVID19 -> Pneumonia) on both axes."""
        index = {label: i for i, label in enumerate(labels)}
        out = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for i, ti in enumerate(self.labels):
            for j, pj in enumerate(self.labels):
                out[index[mapping.get(ti, ti)], index[mapping.get(pj, pj)]] += self.counts[i, j]
        return ConfusionMatrix(labels=labels, counts=out)

    def render(self) -> str:
        width = max(max(len(l) for l in self.labels), len(str(self.counts.max()))) + 2
        header = " " * width + "".join(f"{l:>{width}}" for l in self.labels)
        lines = [header]
        for label, row in zip(self.labels, self.counts):
            lines.append(f"{label:>{width}}" + "".join(f"{v:>{width}}" for v in row))
        return "\n".join(lines)


@dataclass(frozen=True)
class MetricsReport:
    """Accuracy plus the COVID-class screening ratios (None = undefined)."""

    accuracy: Optional[float]
    covid_sensitivity: Optional[float]
    covid_precision: Optional[float]

    @staticmethod
    def format_pct(value: Optional[float]) -> str:
        return "undefined" if value is None else f"{100.0 * value:.1f}%"

    def summary(self) -> str:
        return (
            f"accuracy:          {self.format_pct(self.accuracy)}\n"
            f"covid sensitivity: {self.format_pct(self.covid_sensitivity)}\n"
            f"covid precision:   {self.format_pct(self.covid_precision)}"
        )


def _ratio(num: int, den: int) -> Optional[float]:
    return None if den == 0 else num / den


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Screening metrics from a confusion matrix over the canonical classes."""
    if "COVID19" not in cm.labels:
        return MetricsReport(
            accuracy=_ratio(cm.correct, cm.total),
            covid_sensitivity=None,
            covid_precision=None,
        )
    c = cm.labels.index("COVID19")
    tp = int(cm.counts[c, c])
    return MetricsReport(
        accuracy=_ratio(cm.correct, cm.total),
        covid_sensitivity=_ratio(tp, int(cm.counts[c].sum())),
        covid_precision=_ratio(tp, int(cm.counts[:, c].sum())),
    )


@dataclass(frozen=True)
class EvalResult:
    confusion: ConfusionMatrix
    metrics: MetricsReport
    stage1: Optional[ConfusionMatrix] = None  # root decisions, hierarchical mode
    stage2: Optional[ConfusionMatrix] = None  # leaf decisions over routed P/C rows


def _batched(entries, batch_size):
    for start in range(0, len(entries), batch_size):
        yield entries[start : start + batch_size]


def evaluate(
    model: FlatModel | HierModel,
    entries,
    loader: ImageLoader | None = None,
    batch_size: int = 16,
) -> EvalResult:
    """Classify manifest rows and tabulate confusion and metrics.

    For hierarchical models the result also carries the stage-1 (root) matrix
    over merged labels and the stage-2 (leaf) matrix over the leaf-routed rows
    whose true label is Pneumonia or COVID19.
    """
    entries = list(entries)
    if not entries:
        raise ValueError("evaluation manifest is empty")
    if loader is None:
        loader = ImageLoader()
    hierarchical = isinstance(model, HierModel)
    resolution = model.resolution

    true_labels = [e.label for e in entries]
    predictions = []
    for chunk in _batched(entries, batch_size):
        batch = loader.batch(chunk, resolution)
        if hierarchical:
            predictions.extend(predict_hier(model, batch))
        else:
            predictions.extend(predict_flat(model, batch))
    pred_labels = [p.label for p in predictions]

    if not hierarchical:
        cm = ConfusionMatrix.from_pairs(true_labels, pred_labels, model.labels)
        return EvalResult(confusion=cm, metrics=compute_metrics(cm))

    cm = ConfusionMatrix.from_pairs(true_labels, pred_labels, CLASSES)
    merge = {"COVID19": "Pneumonia"}
    stage1 = ConfusionMatrix.from_pairs(
        [merge.get(t, t) for t in true_labels],
        ["Normal" if len(p.trace) == 1 else "Pneumonia" for p in predictions],
        ROOT_CLASSES,
    )
    leaf_true, leaf_pred = [], []
    for t, p in zip(true_labels, predictions):
        if len(p.trace) == 2 and t in LEAF_CLASSES:
            leaf_true.append(t)
            leaf_pred.append(p.label)
    stage2 = ConfusionMatrix.from_pairs(leaf_true, leaf_pred, LEAF_CLASSES)
    return EvalResult(
        confusion=cm, metrics=compute_metrics(cm), stage1=stage1, stage2=stage2
    )


# -- comparison tables -----------------------------------------------------------

COMPARE_HEADER = (
    "name",
    "accuracy",
    "covid_sensitivity",
    "covid_precision",
    "params",
    "macs",
    "memory_mib",
)


@dataclass(frozen=True)
class CompareRow:
    name: str
    metrics: MetricsReport
    cost: Optional[CostReport] = None


def compare_rows_to_csv(rows: list[CompareRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_HEADER)
        for r in rows:
            m = r.metrics
            writer.writerow(
                [
                    r.name,
                    "" if m.accuracy is None else f"{m.accuracy:.6f}",
                    "" if m.covid_sensitivity is None else f"{m.covid_sensitivity:.6f}",
                    "" if m.covid_precision is None else f"{m.covid_precision:.6f}",
                    "" if r.cost is None else r.cost.param_count,
                    "" if r.cost is None else r.cost.mac_count,
                    "" if r.cost is None else f"{r.cost.memory_mib:.2f}",
                ]
            )


def compare_report(rows: list[CompareRow]) -> str:
    """Aligned text table; rows stay in caller order (never re-sorted)."""
    header = ["model", "accuracy", "covid se", "covid +p", "params", "macs", "memory"]
    table = [header]
    for r in rows:
        m = r.metrics
        table.append(
            [
                r.name,
                MetricsReport.format_pct(m.accuracy),
                MetricsReport.format_pct(m.covid_sensitivity),
                MetricsReport.format_pct(m.covid_precision),
                f"{r.cost.param_count:,}" if r.cost else "-",
                f"{r.cost.mac_count:,}" if r.cost else "-",
                f"{r.cost.memory_mib:.1f} MiB" if r.cost else "-",
            ]
        )
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * widths[j] for j in range(len(header))))
    return "\n".join(lines)
