"""Detection and tracking evaluation.

Detection sets are scored by optimal one-to-one centroid matching within a
radius (matched = TP, leftover detections = FP, leftover truth = FN);
tracking is scored per frame pair as the proportion of id-preserving matches
over the truth nuclei present in the later frame, aggregated as median/IQR.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .assignment import UNASSIGNED, build_cost_matrix, solve_lap
from .errors import MissingCorrespondence

# the matching radius is configurable everywhere it is used; 3 um is a
# typical nuclear radius scale
DEFAULT_MATCH_RADIUS_UM = 3.0


@dataclass(frozen=True)
class DetectionScore:
    """Counts plus the ratios they imply."""

    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "DetectionScore":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        return cls(true_positives=tp, false_positives=fp, false_negatives=fn,
                   precision=precision, recall=recall, f1=f1)


@dataclass(frozen=True)
class AccuracySummary:
    """Per-frame-pair accuracies with their median and interquartile range
    (linear-interpolation quantiles)."""

    per_pair_accuracies: Tuple[float, ...]
    median: float
    iqr: float


def match_centroids(detections, truth,
                    radius: float = DEFAULT_MATCH_RADIUS_UM) -> DetectionScore:
    """Optimal one-to-one matching of detections to truth centroids within
    ``radius`` (gated assignment with gate = radius)."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    detections = np.asarray(detections, dtype=float).reshape(-1, 3)
    truth = np.asarray(truth, dtype=float).reshape(-1, 3)
    if len(detections) == 0 or len(truth) == 0:
        return DetectionScore.from_counts(0, len(detections), len(truth))
    a = solve_lap(build_cost_matrix(detections, truth, gate=radius))
    tp = len(a.matched_pairs())
    return DetectionScore.from_counts(tp, len(detections) - tp,
                                      len(truth) - tp)


def frame_accuracy(predicted: Mapping[str, Optional[int]],
                   truth: Mapping[str, Optional[int]]) -> float:
    """Proportion of correct id-preserving matches over the truth nuclei
    present in the later frame.

    Both mappings send a nucleus id to its detection index in the later
    frame, None meaning absent (truth) or dimmed/unmatched (predicted). A
    nucleus the truth matches but the prediction dims counts as incorrect.
    """
    stray = set(predicted) - set(truth)
    if stray:
        raise MissingCorrespondence(
            f"no truth entry for ids: {sorted(stray)[:5]}")
    present = {i: j for i, j in truth.items() if j is not None}
    if not present:
        raise MissingCorrespondence("truth has no nuclei in the later frame")
    correct = sum(1 for i, j in present.items() if predicted.get(i) == j)
    return correct / len(present)


def summarize(accuracies: Sequence[float]) -> AccuracySummary:
    """Median and IQR (Q3 - Q1) under linear-interpolation quantiles."""
    if len(accuracies) == 0:
        raise ValueError("need at least one accuracy value")
    arr = np.asarray(accuracies, dtype=float)
    q1, med, q3 = np.percentile(arr, [25.0, 50.0, 75.0],
                                method="linear")
    return AccuracySummary(per_pair_accuracies=tuple(float(a) for a in arr),
                           median=float(med), iqr=float(q3 - q1))


def pooled_score(scores: Iterable[DetectionScore]) -> DetectionScore:
    """Counts summed across images, ratios recomputed from the pool."""
    scores = list(scores)
    return DetectionScore.from_counts(
        sum(s.true_positives for s in scores),
        sum(s.false_positives for s in scores),
        sum(s.false_negatives for s in scores))


def per_image_mean(scores: Iterable[DetectionScore]) -> Dict[str, float]:
    """Unweighted mean of per-image precision/recall/F1. Kept separate from
    the pooled ratios because the two genuinely differ; outputs label both."""
    scores = list(scores)
    if not scores:
        raise ValueError("need at least one score")
    return {
        "precision": float(np.mean([s.precision for s in scores])),
        "recall": float(np.mean([s.recall for s in scores])),
        "f1": float(np.mean([s.f1 for s in scores])),
    }


def format_detection_table(rows: Sequence[Tuple[str, DetectionScore]],
                           csv: bool = False) -> str:
    """Method x (Precision, Recall, F1) table, as text or CSV."""
    if csv:
        lines = ["method,precision,recall,f1"]
        lines += [f"{label},{s.precision:.4f},{s.recall:.4f},{s.f1:.4f}"
                  for label, s in rows]
        return "\n".join(lines) + "\n"
    width = max((len(label) for label, _ in rows), default=6)
    width = max(width, len("Method"))
    lines = [f"{'Method':<{width}}  Precision  Recall  F1"]
    for label, s in rows:
        lines.append(f"{label:<{width}}  {s.precision:9.4f}  "
                     f"{s.recall:6.4f}  {s.f1:.4f}")
    return "\n".join(lines) + "\n"


def format_accuracy_table(rows: Sequence[Tuple[str, AccuracySummary]],
                          csv: bool = False) -> str:
    """Method x (Median, IQR) table, as text or CSV."""
    if csv:
        lines = ["method,median,iqr"]
        lines += [f"{label},{s.median:.4f},{s.iqr:.4f}" for label, s in rows]
        return "\n".join(lines) + "\n"
    width = max((len(label) for label, _ in rows), default=6)
    width = max(width, len("Method"))
    lines = [f"{'Method':<{width}}  Median  IQR"]
    for label, s in rows:
        lines.append(f"{label:<{width}}  {s.median:6.4f}  {s.iqr:.4f}")
    return "\n".join(lines) + "\n"
