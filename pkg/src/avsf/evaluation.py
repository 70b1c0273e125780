"""Video-level scoring, confusion metrics, ROC/AUC and report rendering.

The fake class is the positive class throughout.  Real-class rows in
reports are obtained by swapping the positive/negative roles, matching
the two-row-per-test-set table layout.  ROC construction and AUC are
hand-rolled: thresholds sweep the unique scores in descending order
(ties collapse into one step), the curve is anchored at (0,0) and
(1,1), and AUC is the trapezoidal integral.  Zero-denominator metric
cases return 0 and raise a flag instead of dying.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    EmptyEvaluation,
    EmptyPredictionList,
    SingleClassLabels,
)
from .manifest import Label, MediaClip
from .models.temporal import Prediction

DECISION_THRESHOLD = 0.5


def video_score(predictions: Sequence[Prediction]) -> float:
    """Mean fake probability over a video's window predictions.

    Raises:
        EmptyPredictionList: no predictions supplied.
    """
    if len(predictions) == 0:
        raise EmptyPredictionList("video score needs at least one window prediction")
    return float(np.mean([p.fake_prob for p in predictions]))


def decide(score: float) -> Label:
    """Threshold a video score; ties go to fake."""
    return Label.FAKE if score >= DECISION_THRESHOLD else Label.REAL


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts with fake as the positive class."""

    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        for name in ("tp", "tn", "fp", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_decisions(cls, labels: Sequence[int], decisions: Sequence[int]) -> "ConfusionCounts":
        tp = tn = fp = fn = 0
        for y, d in zip(labels, decisions, strict=True):
            if y == int(Label.FAKE):
                if d == int(Label.FAKE):
                    tp += 1
                else:
                    fn += 1
            else:
                if d == int(Label.FAKE):
                    fp += 1
                else:
                    tn += 1
        return cls(tp=tp, tn=tn, fp=fp, fn=fn)


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    zero_division: bool = False


@dataclass
class MetricsBundle:
    """Per-class precision/recall/F1 plus overall accuracy."""

    per_class: dict[str, ClassMetrics]
    accuracy: float


def _prf(tp: int, fp: int, fn: int) -> ClassMetrics:
    flagged = False
    if tp + fp == 0:
        precision, flagged = 0.0, True
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall, flagged = 0.0, True
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0:
        f1, flagged = 0.0, True
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return ClassMetrics(precision=precision, recall=recall, f1=f1, zero_division=flagged)


def compute_metrics(counts: ConfusionCounts) -> MetricsBundle:
    """Precision/recall/F1 for both classes and overall accuracy.

    Fake is the positive class; the real row uses the label-swapped
    counts (TN takes the role of TP, FN of FP, FP of FN).

    Raises:
        EmptyEvaluation: zero scored videos.
    """
    if counts.total == 0:
        raise EmptyEvaluation("metrics over zero videos")
    fake = _prf(counts.tp, counts.fp, counts.fn)
    real = _prf(counts.tn, counts.fn, counts.fp)
    accuracy = (counts.tp + counts.tn) / counts.total
    return MetricsBundle(per_class={"real": real, "fake": fake}, accuracy=accuracy)


class RocPoint(NamedTuple):
    threshold: float
    fpr: float
    tpr: float


def roc_points(scores: Sequence[float], labels: Sequence[int]) -> list[RocPoint]:
    """ROC curve by descending unique-threshold sweep.

    The first point is (0,0) at threshold +inf; a prediction is fake iff
    its score >= the threshold, so the final point (at the minimum
    score) is (1,1).  Equal scores collapse into a single step.

    Raises:
        SingleClassLabels: labels contain only one class.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray([int(v) for v in labels])
    if s.shape[0] != y.shape[0]:
        raise ValueError(f"{s.shape[0]} scores vs {y.shape[0]} labels")
    pos = y == int(Label.FAKE)
    neg = ~pos
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassLabels("ROC needs both real and fake labels")
    points = [RocPoint(threshold=math.inf, fpr=0.0, tpr=0.0)]
    for theta in np.unique(s)[::-1]:
        tpr = float((s[pos] >= theta).sum()) / n_pos
        fpr = float((s[neg] >= theta).sum()) / n_neg
        points.append(RocPoint(threshold=float(theta), fpr=fpr, tpr=tpr))
    return points


def auc_from_points(points: Sequence[RocPoint]) -> float:
    """Trapezoidal area under an ROC point list."""
    fpr = np.asarray([p.fpr for p in points])
    tpr = np.asarray([p.tpr for p in points])
    return float(np.trapezoid(tpr, fpr))


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> tuple[list[RocPoint], float]:
    points = roc_points(scores, labels)
    return points, auc_from_points(points)


@dataclass
class ManipulationStats:
    count: int
    accuracy: float


@dataclass
class MetricsReport:
    """Everything the evaluator knows about one scored test set."""

    name: str
    counts: ConfusionCounts
    accuracy: float
    per_class: dict[str, ClassMetrics]
    auc: float | None = None
    roc: list[RocPoint] | None = None
    auc_note: str = ""
    per_manipulation: dict[str, ManipulationStats] = field(default_factory=dict)
    num_videos: int = 0

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "num_videos": self.num_videos,
            "counts": {"tp": self.counts.tp, "tn": self.counts.tn, "fp": self.counts.fp, "fn": self.counts.fn},
            "accuracy": self.accuracy,
            "per_class": {
                cls: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "zero_division": m.zero_division,
                }
                for cls, m in self.per_class.items()
            },
            "auc": self.auc,
            "per_manipulation": {
                name: {"count": s.count, "accuracy": s.accuracy}
                for name, s in self.per_manipulation.items()
            },
        }
        if self.auc_note:
            out["auc_note"] = self.auc_note
        if self.roc is not None:
            out["roc"] = [{"threshold": p.threshold, "fpr": p.fpr, "tpr": p.tpr} for p in self.roc]
        return out


def build_report(
    name: str,
    clips: Sequence[MediaClip],
    scores: Sequence[float],
    with_roc: bool = True,
) -> MetricsReport:
    """Assemble a full report from per-video fake scores.

    Raises:
        EmptyEvaluation: no clips.
    """
    if len(clips) == 0:
        raise EmptyEvaluation(f"test set {name!r} has no clips")
    if len(clips) != len(scores):
        raise ValueError(f"{len(clips)} clips vs {len(scores)} scores")
    labels = [int(c.label) for c in clips]
    decisions = [int(decide(s)) for s in scores]
    counts = ConfusionCounts.from_decisions(labels, decisions)
    bundle = compute_metrics(counts)

    auc: float | None = None
    roc: list[RocPoint] | None = None
    note = ""
    try:
        roc, auc = roc_auc(scores, labels)
    except SingleClassLabels as exc:
        note = str(exc)
    if not with_roc:
        roc = None

    per_manip: dict[str, ManipulationStats] = {}
    for manip in sorted({c.manipulation.value for c in clips}):
        idx = [i for i, c in enumerate(clips) if c.manipulation.value == manip]
        correct = sum(1 for i in idx if decisions[i] == labels[i])
        per_manip[manip] = ManipulationStats(count=len(idx), accuracy=correct / len(idx))

    return MetricsReport(
        name=name,
        counts=counts,
        accuracy=bundle.accuracy,
        per_class=bundle.per_class,
        auc=auc,
        roc=roc,
        auc_note=note,
        per_manipulation=per_manip,
        num_videos=len(clips),
    )


ScoreFn = Callable[[MediaClip], float]


def evaluate_testsets(
    score_fn: ScoreFn,
    manifests: Mapping[str, Sequence[MediaClip]],
    with_roc: bool = True,
) -> dict[str, MetricsReport]:
    """Score every named test set and a combined pool.

    Raises:
        EmptyEvaluation: no test sets, or an empty test set.
    """
    if not manifests:
        raise EmptyEvaluation("no test sets given")
    reports: dict[str, MetricsReport] = {}
    all_clips: list[MediaClip] = []
    all_scores: list[float] = []
    for name, clips in manifests.items():
        scores = [score_fn(clip) for clip in clips]
        reports[name] = build_report(name, clips, scores, with_roc=with_roc)
        all_clips.extend(clips)
        all_scores.extend(scores)
    if len(manifests) > 1:
        reports["combined"] = build_report("combined", all_clips, all_scores, with_roc=with_roc)
    return reports


def render_table(report: MetricsReport) -> str:
    """Two-row text table: Class, Precision, Recall, F1-score, Accuracy."""
    header = f"{'Class':<8}  {'Precision':>9}  {'Recall':>6}  {'F1-score':>8}  {'Accuracy':>8}"
    lines = [f"Test set: {report.name}  (videos: {report.num_videos})", header, "-" * len(header)]
    for cls in ("real", "fake"):
        m = report.per_class[cls]
        lines.append(
            f"{cls:<8}  {m.precision:>9.2f}  {m.recall:>6.2f}  {m.f1:>8.2f}  {report.accuracy:>8.2f}"
        )
    if report.auc is not None:
        lines.append(f"AUC: {report.auc:.4f}")
    elif report.auc_note:
        lines.append(f"AUC: n/a ({report.auc_note})")
    return "\n".join(lines) + "\n"


def write_report_json(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))


def write_roc_csv(points: Sequence[RocPoint], path: str | Path) -> None:
    lines = ["threshold,fpr,tpr"]
    lines += [f"{p.threshold!r},{p.fpr!r},{p.tpr!r}" for p in points]
    Path(path).write_text("\n".join(lines) + "\n")
