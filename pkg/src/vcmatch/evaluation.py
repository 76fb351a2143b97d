"""Thresholded metrics, the three-arm structural ablation, and report tables."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("setting", "precision", "recall", "f1", "tp", "fp", "tn", "fn", "threshold")
ARM_LABELS = {
    "zero": "No structural (baseline)",
    "full": "Full structural",
    "imputed": "Imputed structural (unseen)",
}


@dataclass(frozen=True)
class MetricReport:
    setting: str
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float = 0.5
    fingerprint: str = ""

    @property
    def count(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def compute_metrics(predictions: Sequence[float], labels: Sequence[int], threshold: float = 0.5,
                    setting: str = "", fingerprint: str = "") -> MetricReport:
    """Positive-class precision/recall/F1 at ``threshold`` (prediction >= threshold is positive)."""
    pred = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels)
    if pred.shape != y.shape:
        raise ValueError(f"{pred.shape[0] if pred.ndim else 0} predictions vs {y.shape[0] if y.ndim else 0} labels")
    if pred.size == 0:
        raise ValueError("no predictions to score")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    hit = pred >= threshold
    pos = y == 1
    tp = int(np.sum(hit & pos))
    fp = int(np.sum(hit & ~pos))
    fn = int(np.sum(~hit & pos))
    tn = int(np.sum(~hit & ~pos))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return MetricReport(setting, precision, recall, f1_score(precision, recall), tp, fp, tn, fn,
                        threshold, fingerprint)


def emit_report(reports: Iterable[MetricReport], fmt: str = "csv") -> str:
    """Render reports as delimited text (``csv``) or a markdown table (``markdown``)."""
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow([r.setting, f"{r.precision:.2f}", f"{r.recall:.2f}", f"{r.f1:.2f}",
                             r.tp, r.fp, r.tn, r.fn, r.threshold])
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| Setting | Precision | Recall | F1 |", "|---|---|---|---|"]
        lines += [f"| {r.setting} | {r.precision:.2f} | {r.recall:.2f} | {r.f1:.2f} |" for r in reports]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report(text: str) -> list[MetricReport]:
    rows = csv.DictReader(io.StringIO(text))
    return [MetricReport(r["setting"], float(r["precision"]), float(r["recall"]), float(r["f1"]),
                         int(r["tp"]), int(r["fp"]), int(r["tn"]), int(r["fn"]), float(r["threshold"]))
            for r in rows]


def run_ablation(data, config, arms: Sequence[str] = ("zero", "full", "imputed")) -> list[MetricReport]:
    """Train one model per structural source on identical data, seeds and settings.

    ``data`` is a :class:`vcmatch.pipeline.PipelineData`; ``config`` a
    :class:`vcmatch.config.RunConfig`. A failing arm is logged and skipped.
    """
    from . import pipeline

    reports = []
    for arm in arms:
        try:
            result = pipeline.train_arm(data, config, arm)
        except Exception:
            log.exception("ablation arm %r failed; continuing with the remaining arms", arm)
            continue
        reports.append(result.report)
    return reports
