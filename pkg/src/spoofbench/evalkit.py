"""Detection metrics, curves and report files.

Conventions used throughout:

* label 1 = FAKE = positive class; higher scores mean "more FAKE";
* a clip is predicted FAKE iff ``score >= threshold`` (ties go positive);
* all values are fractions; rendering to percent happens only in
  :func:`format_table`.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DegenerateScoresError(ValueError):
    """Raised when a curve metric is requested for single-class data."""


@dataclass(frozen=True)
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray
    clip_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.labels)
        if s.ndim != 1 or s.shape != y.shape or s.size == 0:
            raise ValueError("scores and labels must be equal-length, non-empty 1-D arrays")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 (REAL) or 1 (FAKE)")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y.astype(np.int64))
        if self.clip_ids is not None and len(self.clip_ids) != s.size:
            raise ValueError("clip_ids length mismatch")

    @property
    def n(self) -> int:
        return int(self.scores.size)

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return self.n - self.n_pos

    def require_both_classes(self) -> None:
        if self.n_pos == 0 or self.n_neg == 0:
            raise DegenerateScoresError("both classes are required for ROC/AUC/EER/DET")


def as_score_set(scores, labels=None) -> ScoreSet:
    if isinstance(scores, ScoreSet):
        return scores
    return ScoreSet(np.asarray(scores, dtype=np.float64), np.asarray(labels))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    def __iter__(self):
        return iter((self.tp, self.fp, self.tn, self.fn))

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(scores, labels, threshold: float) -> Confusion:
    ss = as_score_set(scores, labels)
    pred = ss.scores >= threshold
    pos = ss.labels == 1
    return Confusion(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _ratio(a: float, b: float) -> float:
    return a / b if b else 0.0


def basic_metrics(c: Confusion | Sequence[int]) -> tuple[float, float, float, float]:
    """Accuracy, precision, recall and F1; any 0/0 ratio counts as 0."""
    tp, fp, tn, fn = c
    n = tp + fp + tn + fn
    if n < 1:
        raise ValueError("empty confusion table")
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return (tp + tn) / n, precision, recall, _ratio(2 * precision * recall, precision + recall)


@dataclass(frozen=True)
class RocCurve:
    """Points ordered by decreasing threshold, from (+inf, 0, 0) to (-inf, 1, 1)."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def __len__(self) -> int:
        return int(self.fpr.size)


def roc_curve(scores, labels=None) -> RocCurve:
    ss = as_score_set(scores, labels)
    ss.require_both_classes()
    order = np.argsort(-ss.scores, kind="mergesort")
    s = ss.scores[order]
    y = ss.labels[order]
    tps = np.cumsum(y)
    fps = np.cumsum(1 - y)
    # one step per distinct score: keep the last index of each tie group
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    thr = np.r_[np.inf, s[last], -np.inf]
    tpr = np.r_[0.0, tps[last] / ss.n_pos, 1.0]
    fpr = np.r_[0.0, fps[last] / ss.n_neg, 1.0]
    return RocCurve(thr, fpr, tpr)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under TPR(FPR)."""
    dx = np.diff(curve.fpr)
    return float(np.sum(dx * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


def roc_auc(scores, labels=None) -> float:
    return auc(roc_curve(scores, labels))


def eer(scores, labels=None) -> tuple[float, float]:
    """Equal error rate and the threshold where it occurs.

    FAR = FPR and FRR = 1 - TPR are walked along the ROC points; the first
    point with FAR == FRR is returned as is, otherwise the crossing between
    the two adjacent points where FAR - FRR changes sign is linearly
    interpolated.
    """
    curve = roc_curve(scores, labels)
    far = curve.fpr
    frr = 1.0 - curve.tpr
    diff = far - frr
    exact = np.nonzero(diff == 0)[0]
    if exact.size:
        i = int(exact[0])
        return float(far[i]), float(curve.thresholds[i])
    j = int(np.argmax(diff > 0))  # diff starts at -1 and ends at +1
    i = j - 1
    alpha = -diff[i] / (diff[j] - diff[i])
    rate = far[i] + alpha * (far[j] - far[i])
    t0, t1 = curve.thresholds[i], curve.thresholds[j]
    if np.isfinite(t0) and np.isfinite(t1):
        thr = t0 + alpha * (t1 - t0)
    else:
        thr = t1 if np.isfinite(t1) else t0
    return float(rate), float(thr)


def det_points(scores, labels=None) -> np.ndarray:
    """(FPR, FNR) pairs in raw probability units, one per ROC point."""
    curve = roc_curve(scores, labels)
    return np.column_stack([curve.fpr, 1.0 - curve.tpr])


class ThresholdPolicy(enum.Enum):
    FIXED = "fixed"
    EER_THRESHOLD = "eer"
    MEDIAN = "median"


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    eer: float
    auc: float
    threshold_used: float
    confusion: Confusion
    roc: RocCurve = field(repr=False)
    det: np.ndarray = field(repr=False)
    metadata: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "eer": self.eer,
            "auc": self.auc,
            "threshold_used": self.threshold_used,
            "confusion": asdict(self.confusion),
        }

    def to_dict(self) -> dict:
        return {**self.summary(), "metadata": self.metadata}


def report_from_scores(
    scores,
    labels=None,
    policy: ThresholdPolicy | str = ThresholdPolicy.FIXED,
    threshold: float = 0.5,
    metadata: dict | None = None,
) -> MetricsReport:
    ss = as_score_set(scores, labels)
    ss.require_both_classes()
    policy = ThresholdPolicy(policy)
    e, e_thr = eer(ss)
    if policy is ThresholdPolicy.EER_THRESHOLD:
        threshold = e_thr
    elif policy is ThresholdPolicy.MEDIAN:
        threshold = float(np.median(ss.scores))
    conf = confusion(ss, None, threshold)
    acc, prec, rec, f1 = basic_metrics(conf)
    curve = roc_curve(ss)
    return MetricsReport(
        acc, prec, rec, f1, e, auc(curve), float(threshold), conf, curve,
        np.column_stack([curve.fpr, 1.0 - curve.tpr]), dict(metadata or {}),
    )


def score_model(model, records, store=None, batch_size: int = 16) -> ScoreSet:
    """P(FAKE) for each record under ``model`` in evaluation mode."""
    import torch

    from .features import FeatureStore

    store = store or FeatureStore()
    model.eval()
    probs = []
    with torch.no_grad():
        for i in range(0, len(records), batch_size):
            chunk = records[i : i + batch_size]
            probs.append(model.fake_probability(model(store.batch(chunk, model.spec.input_kind))))
    p = torch.cat(probs).double().numpy() if probs else np.zeros(0)
    return ScoreSet(p, np.array([int(r.label) for r in records]), tuple(r.clip_id for r in records))


def evaluate(
    source,
    records=None,
    policy: ThresholdPolicy | str = ThresholdPolicy.FIXED,
    store=None,
    metadata: dict | None = None,
) -> MetricsReport:
    """Metrics for a ScoreSet, or for a model scored on ``records``.

    Model scores are P(FAKE): the sigmoid of a single FAKE logit or the FAKE
    component of a two-way softmax. The default threshold is 0.5.
    """
    if isinstance(source, ScoreSet):
        ss = source
    else:
        if not records:
            raise ValueError("records are required when evaluating a model")
        ss = score_model(source, records, store)
    return report_from_scores(ss, policy=policy, metadata=metadata)


# ---------------------------------------------------------------------------
# files


def write_score_file(path: str | Path, ss: ScoreSet) -> None:
    """``clip_id<TAB>label<TAB>score`` lines, sorted by clip id."""
    if ss.clip_ids is None:
        raise ValueError("score files need clip ids")
    rows = sorted(zip(ss.clip_ids, ss.labels.tolist(), ss.scores.tolist()))
    Path(path).write_text("".join(f"{c}\t{y}\t{s!r}\n" for c, y, s in rows), encoding="utf-8")


def read_score_file(path: str | Path) -> ScoreSet:
    ids, labels, scores = [], [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[1] not in ("0", "1"):
            raise ValueError(f"{path}: malformed score line {lineno}")
        ids.append(parts[0])
        labels.append(int(parts[1]))
        scores.append(float(parts[2]))
    return ScoreSet(np.array(scores), np.array(labels, dtype=np.int64), tuple(ids))


def write_report(out_dir: str | Path, report: MetricsReport) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / "report.json",
        "roc": out / "roc.csv",
        "det": out / "det.csv",
        "confusion": out / "confusion.csv",
    }
    paths["report"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with paths["roc"].open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "fpr", "tpr"])
        for t, x, y in zip(report.roc.thresholds, report.roc.fpr, report.roc.tpr):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])
    with paths["det"].open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["fpr", "fnr"])
        for x, y in report.det:
            w.writerow([repr(float(x)), repr(float(y))])
    c = report.confusion
    with paths["confusion"].open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["", "pred_real", "pred_fake"])
        w.writerow(["real", c.tn, c.fp])
        w.writerow(["fake", c.fn, c.tp])
    return paths


COLUMNS = ("Acc", "Prec", "Rec", "F1", "EER", "AUC")


def table_row(report: MetricsReport | dict) -> list[str]:
    d = report.summary() if isinstance(report, MetricsReport) else report
    keys = ("accuracy", "precision", "recall", "f1", "eer", "auc")
    return [f"{100.0 * d[k]:.2f}" for k in keys]


def format_table(rows: Iterable[tuple[str, MetricsReport | dict]]) -> str:
    """Plain-text comparison table in percent with two decimals."""
    rows = [(name, table_row(r)) for name, r in rows]
    width = max([len("Model")] + [len(n) for n, _ in rows])
    lines = [" | ".join(["Model".ljust(width)] + [c.rjust(6) for c in COLUMNS])]
    lines.append("-" * len(lines[0]))
    for name, vals in rows:
        lines.append(" | ".join([name.ljust(width)] + [v.rjust(6) for v in vals]))
    return "\n".join(lines)
