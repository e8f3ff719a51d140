"""Center-distance detection metrics: per-class AP, TP errors and detection score."""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from scafusion.config import EvalConfig
from scafusion.value_objects import CLASS_NAMES, Box3D

logger = logging.getLogger(__name__)

RECALL_POINTS = 101
MIN_RECALL = 0.1
MIN_PRECISION = 0.1
TP_THRESHOLD = 2.0
TP_METRICS = ("trans_err", "scale_err", "orient_err")
RECALL_GRID = np.linspace(0.0, 1.0, RECALL_POINTS)


@dataclass(frozen=True)
class MatchResult:
    """Matching of one class at one threshold, predictions in descending score order.

    Attributes:
        scores: Prediction scores.
        gt_index: ``(sample, box)`` of the matched ground truth, ``None`` for false
            positives.
        distance: Centre distance to the matched ground truth, ``nan`` for false
            positives.
        errors: Per-prediction ``(translation, scale, orientation)`` error, ``nan``
            rows for false positives.
        n_gt: Ground-truth boxes of the class.
    """

    scores: np.ndarray
    gt_index: tuple[tuple[int, int] | None, ...]
    distance: np.ndarray
    errors: np.ndarray
    n_gt: int

    @property
    def is_tp(self) -> np.ndarray:
        return np.array([g is not None for g in self.gt_index], dtype=bool)

    @property
    def num_tp(self) -> int:
        return int(self.is_tp.sum())


def yaw_difference(a: float, b: float) -> float:
    """Smallest absolute angle between two headings, in [0, pi]."""
    return abs((a - b + math.pi) % (2.0 * math.pi) - math.pi)


def scale_error(pred: Box3D, gt: Box3D) -> float:
    """``1 - IoU`` of the two boxes after aligning centres and headings."""
    inter = float(np.prod(np.minimum(pred.size, gt.size)))
    union = pred.volume + gt.volume - inter
    return 1.0 - inter / union


def match_predictions(
    preds: list[list[Box3D]],
    gts: list[list[Box3D]],
    threshold: float,
    label: int,
) -> MatchResult:
    """Greedy matching of scored predictions to same-class ground truth per sample.

    Predictions are visited in descending score order over all samples; each takes the
    nearest still-unmatched ground truth of its sample if that lies within
    ``threshold``.
    """
    candidates = [
        (box.score if box.score is not None else 0.0, sample, box)
        for sample, boxes in enumerate(preds)
        for box in boxes
        if box.label == label
    ]
    order = sorted(range(len(candidates)), key=lambda k: -candidates[k][0])
    targets = [
        [(k, box) for k, box in enumerate(boxes) if box.label == label] for boxes in gts
    ]
    taken: set[tuple[int, int]] = set()
    scores, gt_index, distances, errors = [], [], [], []
    for k in order:
        score, sample, pred = candidates[k]
        best, best_distance = None, math.inf
        for index, gt in targets[sample]:
            if (sample, index) in taken:
                continue
            distance = pred.distance_2d(gt)
            if distance < best_distance:
                best, best_distance = (index, gt), distance
        scores.append(score)
        if best is not None and best_distance <= threshold:
            taken.add((sample, best[0]))
            gt_index.append((sample, best[0]))
            distances.append(best_distance)
            errors.append(
                (
                    best_distance,
                    scale_error(pred, best[1]),
                    yaw_difference(pred.yaw, best[1].yaw),
                )
            )
        else:
            gt_index.append(None)
            distances.append(math.nan)
            errors.append((math.nan, math.nan, math.nan))
    return MatchResult(
        scores=np.array(scores, dtype=np.float64),
        gt_index=tuple(gt_index),
        distance=np.array(distances, dtype=np.float64),
        errors=np.array(errors, dtype=np.float64).reshape(-1, 3),
        n_gt=sum(len(t) for t in targets),
    )


def precision_recall_curve(matches: MatchResult) -> np.ndarray:
    """Interpolated precision on the 101-point recall grid.

    Each point holds the best precision at recall >= r, 0 beyond the last recall.
    """
    curve = np.zeros(RECALL_POINTS)
    if matches.n_gt == 0 or len(matches.scores) == 0:
        return curve
    tp = np.cumsum(matches.is_tp)
    fp = np.cumsum(~matches.is_tp)
    precision = tp / (tp + fp)
    recall = tp / matches.n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    for k, r in enumerate(RECALL_GRID):
        reached = np.flatnonzero(recall >= r - 1e-12)
        curve[k] = envelope[reached[0]] if reached.size else 0.0
    return curve


def ap_from_curve(curve: np.ndarray) -> float:
    start = int(round(MIN_RECALL * (RECALL_POINTS - 1)))
    tail = np.clip(curve[start:] - MIN_PRECISION, 0.0, None) / (1.0 - MIN_PRECISION)
    return float(tail.mean())


def average_precision(matches: MatchResult) -> float | None:
    """Mean over recall points in [0.1, 1] of ``max(0, p - 0.1) / 0.9``.

    Returns:
        AP, or ``None`` when the class has no ground truth (absent from mAP).
    """
    if matches.n_gt == 0:
        return None
    return ap_from_curve(precision_recall_curve(matches))


def tp_errors(matches: MatchResult) -> dict[str, float]:
    """Mean translation, scale and orientation error over true positives.

    Each error is 1.0 when nothing matched.
    """
    if matches.num_tp == 0:
        return {name: 1.0 for name in TP_METRICS}
    means = matches.errors[matches.is_tp].mean(axis=0)
    return dict(zip(TP_METRICS, (float(v) for v in means)))


def error_recall_curves(matches: MatchResult) -> dict[str, list[float | None]]:
    """Cumulative mean of each TP error in score order, sampled on the recall grid.

    Points before the first true positive hold ``None``.
    """
    curves: dict[str, list[float | None]] = {
        name: [None] * RECALL_POINTS for name in TP_METRICS
    }
    if matches.n_gt == 0 or matches.num_tp == 0:
        return curves
    tp_errors_in_order = matches.errors[matches.is_tp]
    ranks = np.arange(1, len(tp_errors_in_order) + 1)
    cumulative = np.cumsum(tp_errors_in_order, axis=0) / ranks[:, None]
    recall = np.arange(1, len(tp_errors_in_order) + 1) / matches.n_gt
    for k, r in enumerate(RECALL_GRID):
        reached = np.flatnonzero(recall >= r - 1e-12)
        if reached.size:
            for m, name in enumerate(TP_METRICS):
                curves[name][k] = float(cumulative[reached[0], m])
    return curves


def nds(mean_ap: float, errors: dict[str, float]) -> float:
    """``(5 mAP + sum(1 - min(1, e))) / (5 + T)`` over the T errors given."""
    error_scores = sum(1.0 - min(1.0, e) for e in errors.values())
    return (5.0 * mean_ap + error_scores) / (5.0 + len(errors))


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation result.

    Classes without ground truth carry ``None`` AP and are left out of the means.
    """

    ap: dict[str, dict[float, float | None]]
    mean_ap: float
    class_errors: dict[str, dict[str, float]]
    mean_errors: dict[str, float]
    nds: float
    pr_curves: dict[str, dict[float, list[float]]] = field(default_factory=dict)
    error_curves: dict[str, dict[str, list[float | None]]] = field(default_factory=dict)

    def class_ap(self, name: str) -> float | None:
        values = [v for v in self.ap[name].values() if v is not None]
        return float(np.mean(values)) if values else None

    def to_dict(self) -> dict[str, Any]:
        return {
            "mAP": self.mean_ap,
            "NDS": self.nds,
            "mATE": self.mean_errors["trans_err"],
            "mASE": self.mean_errors["scale_err"],
            "mAOE": self.mean_errors["orient_err"],
            "ap": {
                name: {str(t): v for t, v in values.items()}
                for name, values in self.ap.items()
            },
            "class_ap": {name: self.class_ap(name) for name in self.ap},
            "class_errors": self.class_errors,
            "recall_grid": RECALL_GRID.tolist(),
            "pr_curves": {
                name: {str(t): c for t, c in curves.items()}
                for name, curves in self.pr_curves.items()
            },
            "error_curves": self.error_curves,
        }

    def csv_row(self, name: str) -> dict[str, Any]:
        row = {"model": name, "mAP": self.mean_ap, "NDS": self.nds}
        row.update(
            {
                "mATE": self.mean_errors["trans_err"],
                "mASE": self.mean_errors["scale_err"],
                "mAOE": self.mean_errors["orient_err"],
            }
        )
        for class_name in self.ap:
            row[f"AP_{class_name}"] = self.class_ap(class_name)
        return row


def evaluate(
    preds: list[list[Box3D]],
    gts: list[list[Box3D]],
    thresholds: tuple[float, ...] = EvalConfig().thresholds,
    class_names: tuple[str, ...] = CLASS_NAMES,
) -> MetricsReport:
    """Full metric suite over a list of samples.

    Raises:
        ValueError: If prediction and ground-truth lists differ in length.
    """
    if len(preds) != len(gts):
        raise ValueError(
            f"predictions cover {len(preds)} samples - ground truth covers {len(gts)}"
        )
    ap: dict[str, dict[float, float | None]] = {}
    pr_curves: dict[str, dict[float, list[float]]] = {}
    class_errors: dict[str, dict[str, float]] = {}
    error_curves: dict[str, dict[str, list[float | None]]] = {}
    for label, name in enumerate(class_names):
        ap[name], pr_curves[name] = {}, {}
        for threshold in thresholds:
            matches = match_predictions(preds, gts, threshold, label)
            ap[name][threshold] = average_precision(matches)
            pr_curves[name][threshold] = precision_recall_curve(matches).tolist()
            if threshold == TP_THRESHOLD:
                if matches.n_gt:
                    class_errors[name] = tp_errors(matches)
                error_curves[name] = error_recall_curves(matches)
    present = [
        name for name in class_names if any(v is not None for v in ap[name].values())
    ]
    mean_ap, mean_errors = 0.0, {metric: 1.0 for metric in TP_METRICS}
    if present:
        mean_ap = float(np.mean([np.mean(list(ap[n].values())) for n in present]))
        mean_errors = {
            metric: float(np.mean([class_errors[n][metric] for n in present]))
            for metric in TP_METRICS
        }
    report = MetricsReport(
        ap,
        mean_ap,
        class_errors,
        mean_errors,
        nds(mean_ap, mean_errors),
        pr_curves,
        error_curves,
    )
    logger.info("mAP %.4f NDS %.4f", report.mean_ap, report.nds)
    return report


def write_report(
    report: MetricsReport, out_dir: str | Path, name: str = "model"
) -> tuple[Path, Path]:
    """Write report.json (full report) and report.csv (one summary row)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path, csv_path = out_dir / "report.json", out_dir / "report.csv"
    json_path.write_text(json.dumps(report.to_dict(), indent=2))
    row = report.csv_row(name)
    with csv_path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)
    return json_path, csv_path
