"""Pixel-level confusion counting and the precision/recall/F1/IoU metrics,
plus the comparison-table report (CSV and Markdown).

Empty-denominator convention used throughout: a metric whose denominator is
zero is 1 when TP=FP=FN=0 (a perfectly predicted empty patch) and 0 otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class ConfusionCounts:
    """Pixel tallies; addable so per-patch counts pool into micro totals."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp,
            self.fn + other.fn, self.tn + other.tn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _as_binary(arr, name: str) -> np.ndarray:
    a = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} must be binary {{0,1}}")
    return a.astype(bool)


def confusion(pred_mask, target) -> ConfusionCounts:
    """Exact integer confusion tallies for two binary masks."""
    p = _as_binary(pred_mask, "pred_mask")
    t = _as_binary(target, "target")
    if p.shape != t.shape:
        raise ShapeError(f"confusion: shape mismatch {p.shape} vs {t.shape}")
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & t)),
        fp=int(np.count_nonzero(p & ~t)),
        fn=int(np.count_nonzero(~p & t)),
        tn=int(np.count_nonzero(~p & ~t)),
    )


def _empty_value(c: ConfusionCounts) -> float:
    return 1.0 if (c.tp == 0 and c.fp == 0 and c.fn == 0) else 0.0


def precision(c: ConfusionCounts) -> float:
    den = c.tp + c.fp
    return c.tp / den if den else _empty_value(c)


def recall(c: ConfusionCounts) -> float:
    den = c.tp + c.fn
    return c.tp / den if den else _empty_value(c)


def f1(counts_or_precision, recall_value=None) -> float:
    """F1 from ConfusionCounts, or the harmonic mean of (precision, recall)."""
    if recall_value is None:
        c = counts_or_precision
        p, r = precision(c), recall(c)
        if p + r == 0.0:
            return _empty_value(c)
        return 2.0 * p * r / (p + r)
    p, r = float(counts_or_precision), float(recall_value)
    return 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0


def iou(c: ConfusionCounts) -> float:
    den = c.tp + c.fp + c.fn
    return c.tp / den if den else _empty_value(c)


def all_metrics(c: ConfusionCounts) -> dict:
    return {
        "precision": precision(c),
        "recall": recall(c),
        "f1": f1(c),
        "iou": iou(c),
    }


def aggregate_metrics(counts: list, mode: str = "micro") -> dict:
    """Pool per-patch counts (micro) or average per-patch metrics (macro)."""
    if not counts:
        raise ValueError("aggregate_metrics needs at least one ConfusionCounts")
    if mode == "micro":
        pooled = ConfusionCounts()
        for c in counts:
            pooled = pooled + c
        return all_metrics(pooled)
    if mode == "macro":
        per = [all_metrics(c) for c in counts]
        return {k: float(np.mean([m[k] for m in per])) for k in per[0]}
    raise ValueError(f"unknown averaging mode {mode!r}; expected micro or macro")


@dataclass
class ReportRow:
    model: str
    f1: float
    precision: float
    recall: float
    iou: float


@dataclass
class MetricsReport:
    """Comparison table: rows sorted by F1 descending, name-ascending ties."""

    rows: list
    mode: str = "micro"

    def to_csv(self) -> str:
        lines = ["model,f1,precision,recall,iou"]
        for r in self.rows:
            lines.append(
                f"{r.model},{r.f1:.4f},{r.precision:.4f},{r.recall:.4f},{r.iou:.4f}"
            )
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        lines = [
            "| Model | F1 | Precision | Recall | IoU |",
            "| --- | --- | --- | --- | --- |",
        ]
        for r in self.rows:
            lines.append(
                f"| {r.model} | {r.f1:.4f} | {r.precision:.4f} "
                f"| {r.recall:.4f} | {r.iou:.4f} |"
            )
        return "\n".join(lines) + "\n"


def benchmark_report(entries: list, mode: str = "micro") -> MetricsReport:
    """Build the comparison table from (name, ConfusionCounts|metrics-dict)
    pairs. Metric dicts need precision/recall/f1/iou keys (all in [0,1])."""
    if not entries:
        raise ValueError("benchmark_report needs at least one entry")
    names = [name for name, _ in entries]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate model names: {dupes}")
    rows = []
    for name, payload in entries:
        m = all_metrics(payload) if isinstance(payload, ConfusionCounts) else payload
        rows.append(ReportRow(name, float(m["f1"]), float(m["precision"]),
                              float(m["recall"]), float(m["iou"])))
    rows.sort(key=lambda r: (-r.f1, r.model))
    return MetricsReport(rows=rows, mode=mode)
