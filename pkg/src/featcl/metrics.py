"""Evaluation protocol: overall accuracy after each sequence, per-origin
accuracy matrix, pooled logit-variance trace, and forgetting summaries.

Prediction is argmax over raw logits in every mode; ties go to the smallest
global category id. Evaluation is closed-set over the categories the model
knows (an example with an unseen category is a validation error).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import MultiHeadModel, forward_training


def _logits_for(model: MultiHeadModel, features: np.ndarray) -> np.ndarray:
    logits, _ = forward_training(model, np.asarray(features, dtype=np.float64))
    return logits


def predict_categories(model: MultiHeadModel, features: np.ndarray) -> np.ndarray:
    """Argmax category id per example; ties resolved to the smallest id."""
    logits = _logits_for(model, features)
    ids = np.asarray(model.category_ids, dtype=np.int64)
    is_max = logits == logits.max(axis=1, keepdims=True)
    # smallest id among the argmax positions
    candidates = np.where(is_max, ids[None, :], np.iinfo(np.int64).max)
    return candidates.min(axis=1)


def evaluate(
    model: MultiHeadModel,
    features: np.ndarray,
    labels: np.ndarray,
    sequences_seen: list[list[int]],
) -> tuple[float, list[float]]:
    """(overall accuracy, accuracy per origin sequence).

    Per-origin rows restrict the ground truth to one sequence's categories
    while predictions still range over every known category.
    """
    labels = np.asarray(labels, dtype=np.int64)
    known = set(model.category_ids)
    unseen = set(int(c) for c in np.unique(labels)) - known
    if unseen:
        raise ValidationError(f"validation examples with unseen categories: {sorted(unseen)}")
    if len(labels) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    predictions = predict_categories(model, features)
    correct = predictions == labels
    per_origin = []
    for cats in sequences_seen:
        mask = np.isin(labels, [int(c) for c in cats])
        if not mask.any():
            raise ValidationError(f"no validation examples for categories {cats}")
        per_origin.append(float(correct[mask].mean()))
    return float(correct.mean()), per_origin


def logit_variance(model: MultiHeadModel, features: np.ndarray) -> float:
    """Population variance pooled over every (example, category) logit."""
    logits = _logits_for(model, features)
    if logits.size < 2:
        raise ValidationError("need at least 2 logit values for a variance")
    return float(np.var(logits))


def forgetting_summary(accuracy_matrix: list[list[float]]) -> list[float]:
    """F[k] = best accuracy ever achieved on sequence k's categories minus the
    final accuracy on them."""
    if not accuracy_matrix:
        raise ValidationError("empty accuracy matrix")
    n = len(accuracy_matrix)
    for s, row in enumerate(accuracy_matrix):
        if len(row) != s + 1:
            raise ValidationError(f"row {s} must have {s + 1} entries, got {len(row)}")
    last = accuracy_matrix[-1]
    return [max(accuracy_matrix[s][k] for s in range(k, n)) - last[k] for k in range(n)]


@dataclass
class MetricsReport:
    """Everything a run reports; consistency-checked on construction."""

    overall_accuracy: list[float]
    accuracy_matrix: list[list[float]]  # row s has entries for k = 0..s
    variance_trace: list[float]
    origin_counts: list[int]  # validation examples per origin sequence
    config_echo: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)
    manifest_sha256: str = ""

    def __post_init__(self):
        n = len(self.overall_accuracy)
        if not (len(self.accuracy_matrix) == len(self.variance_trace) == len(self.origin_counts) == n):
            raise ValidationError("report sections disagree on sequence count")
        for s, row in enumerate(self.accuracy_matrix):
            if len(row) != s + 1:
                raise ValidationError(f"accuracy matrix row {s} must have {s + 1} entries")
            if any(not 0.0 <= a <= 1.0 for a in row):
                raise ValidationError(f"accuracy outside [0, 1] in row {s}")
            weights = self.origin_counts[: s + 1]
            recombined = float(np.dot(row, weights) / np.sum(weights))
            if abs(recombined - self.overall_accuracy[s]) > 1e-12:
                raise ValidationError(
                    f"overall accuracy at s={s} ({self.overall_accuracy[s]}) does not match "
                    f"its example-weighted row ({recombined})"
                )
        if any(v < 0 for v in self.variance_trace):
            raise ValidationError("variance trace must be nonnegative")

    def num_sequences(self) -> int:
        return len(self.overall_accuracy)

    def final_accuracy(self) -> float:
        return self.overall_accuracy[-1]


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "overall_accuracy": report.overall_accuracy,
        "accuracy_matrix": report.accuracy_matrix,
        "variance_trace": report.variance_trace,
        "origin_counts": report.origin_counts,
        "config": report.config_echo,
        "seeds": report.seeds,
        "manifest_sha256": report.manifest_sha256,
    }


def report_from_dict(payload: dict) -> MetricsReport:
    return MetricsReport(
        overall_accuracy=[float(a) for a in payload["overall_accuracy"]],
        accuracy_matrix=[[float(a) for a in row] for row in payload["accuracy_matrix"]],
        variance_trace=[float(v) for v in payload["variance_trace"]],
        origin_counts=[int(c) for c in payload["origin_counts"]],
        config_echo=payload.get("config", {}),
        seeds=[int(s) for s in payload.get("seeds", [])],
        manifest_sha256=payload.get("manifest_sha256", ""),
    )


def write_report(report: MetricsReport, out_dir) -> None:
    """report.json plus accuracy_matrix.csv and variance_trace.csv.

    Floats are written with repr so every file round-trips losslessly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report_to_dict(report), indent=2) + "\n")
    n = report.num_sequences()
    with open(out / "accuracy_matrix.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence"] + [f"seq_{k}" for k in range(n)])
        for s, row in enumerate(report.accuracy_matrix):
            writer.writerow([s] + [repr(a) for a in row] + [""] * (n - s - 1))
    with open(out / "variance_trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence", "variance"])
        for s, v in enumerate(report.variance_trace):
            writer.writerow([s, repr(v)])


def read_report(run_dir) -> MetricsReport:
    path = Path(run_dir) / "report.json"
    return report_from_dict(json.loads(path.read_text()))
