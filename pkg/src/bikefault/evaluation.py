"""Confusion-matrix metrics, complexity reporting, and the comparison table.

The positive class is Unusable(1) throughout: recall is the fraction of
truly unusable bikes caught, precision the fraction of flagged bikes that
really are unusable.  Ties at probability 0.5 resolve to Normal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import numerics
from .feature_engine import FeatureTensor
from .model import TransformerModel, count_complexity


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    model: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    params_m: float | None = None
    macs_g: float | None = None
    degenerate: tuple[str, ...] = ()


def confusion(y_true: Sequence, y_pred: Sequence) -> ConfusionCounts:
    """Count tp/fp/tn/fn with Unusable(1) as the positive class."""
    if len(y_true) != len(y_pred):
        raise ValueError(f"length mismatch: {len(y_true)} labels vs {len(y_pred)} predictions")
    if not y_true:
        raise ValueError("cannot build a confusion matrix from zero samples")
    tp = fp = tn = fn = 0
    for t, p in zip(y_true, y_pred):
        t, p = int(t), int(p)
        if p == 1:
            tp, fp = (tp + 1, fp) if t == 1 else (tp, fp + 1)
        else:
            tn, fn = (tn + 1, fn) if t == 0 else (tn, fn + 1)
    return ConfusionCounts(tp, fp, tn, fn)


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def metrics(c: ConfusionCounts, model: str = "") -> MetricsReport:
    """Accuracy, precision, recall, F1 from counts.

    Zero-denominator metrics come back as 0.0 and are listed in the
    report's ``degenerate`` field instead of going NaN.
    """
    if c.total == 0:
        raise ValueError("empty confusion matrix")
    degenerate: list[str] = []
    accuracy = (c.tp + c.tn) / c.total
    if c.tp + c.fp == 0:
        precision = 0.0
        degenerate.append("precision")
    else:
        precision = c.tp / (c.tp + c.fp)
    if c.tp + c.fn == 0:
        recall = 0.0
        degenerate.append("recall")
    else:
        recall = c.tp / (c.tp + c.fn)
    if precision + recall == 0.0:
        degenerate.append("f1")
    return MetricsReport(model=model, accuracy=accuracy, precision=precision,
                         recall=recall, f1=f1_score(precision, recall),
                         degenerate=tuple(degenerate))


def predict_statuses(model: TransformerModel, tensor: FeatureTensor,
                     threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities and thresholded statuses for every sample.

    A bike is flagged Unusable only when its probability strictly exceeds
    the threshold, so an exact tie stays Normal.
    """
    with numerics.no_grad():
        probs = model.forward_probs(tensor.values.astype(np.float32)).data
    preds = (probs[:, 1] > threshold).astype(np.int64)
    return probs, preds


def evaluate(model: TransformerModel, tensor: FeatureTensor,
             model_name: str = "transformer", threshold: float = 0.5,
             include_complexity: bool = True) -> MetricsReport:
    """Score a model on a labeled tensor and attach its complexity."""
    if not tensor.fully_labeled():
        raise ValueError("evaluate needs a fully labeled tensor")
    _, preds = predict_statuses(model, tensor, threshold)
    report = metrics(confusion([int(s) for s in tensor.labels], preds), model=model_name)
    if include_complexity:
        n_params, n_macs = count_complexity(model.config)
        report.params_m = n_params / 1e6
        report.macs_g = n_macs / 1e9
    return report


# -- table rendering ---------------------------------------------------------------


_COLUMNS = ("ACC", "Recall", "Precision", "F1 Score", "MACs (G)", "Params (M)")


def _cell(value: float | None) -> str:
    return "---" if value is None else f"{value:.4f}"


def report_row(r: MetricsReport) -> str:
    """One machine-readable JSON line for a report."""
    row: dict = {"model": r.model, "acc": r.accuracy, "recall": r.recall,
                 "precision": r.precision, "f1": r.f1}
    if r.macs_g is not None:
        row["macs_g"] = r.macs_g
    if r.params_m is not None:
        row["params_m"] = r.params_m
    if r.degenerate:
        row["degenerate"] = list(r.degenerate)
    return json.dumps(row)


def render_table(reports: Sequence[MetricsReport]) -> tuple[str, list[str]]:
    """Rows in input order as (text table, machine-readable JSON lines)."""
    if not reports:
        raise ValueError("render_table needs at least one report")
    names = [r.model for r in reports]
    width = max(len("Model"), *(len(n) for n in names))
    header = "Model".ljust(width) + "".join(f"  {c:>10}" for c in _COLUMNS)
    lines = [header, "-" * len(header)]
    for r in reports:
        cells = [_cell(r.accuracy), _cell(r.recall), _cell(r.precision), _cell(r.f1),
                 _cell(r.macs_g), _cell(r.params_m)]
        lines.append(r.model.ljust(width) + "".join(f"  {c:>10}" for c in cells))
    return "\n".join(lines) + "\n", [report_row(r) for r in reports]


def parse_report_rows(rows: Iterable[str]) -> list[MetricsReport]:
    """Inverse of report_row; reproduces the reports exactly."""
    out = []
    for line in rows:
        line = line.strip()
        if not line:
            continue
        d = json.loads(line)
        out.append(MetricsReport(model=d["model"], accuracy=d["acc"], recall=d["recall"],
                                 precision=d["precision"], f1=d["f1"],
                                 params_m=d.get("params_m"), macs_g=d.get("macs_g"),
                                 degenerate=tuple(d.get("degenerate", ()))))
    return out
