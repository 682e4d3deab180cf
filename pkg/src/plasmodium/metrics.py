"""Binary-classification metrics: confusion matrix, per-class rates,
macro/weighted averages, MCC, ROC-AUC and a fixed-layout text report.

Everything here is a pure function over plain arrays; this module is the
yardstick the model runs are judged by, so it has no dependency on any
training code. The positive class for TP/FP accounting is parasitized
(class 1) and degenerate denominators yield 0 with a flag rather than NaN.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

CLASS_NAMES = ("uninfected", "parasitized")


@dataclass(frozen=True)
class ConfusionMatrix:
    """2x2 counts indexed [true_class][predicted_class]."""

    counts: tuple[tuple[int, int], tuple[int, int]]
    class_names: tuple[str, str] = CLASS_NAMES

    def __post_init__(self):
        flat = [c for row in self.counts for c in row]
        if len(self.counts) != 2 or any(len(row) != 2 for row in self.counts):
            raise ValueError("confusion matrix must be 2x2")
        if any(c < 0 for c in flat):
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_rates(cls, tn: int, fp: int, fn: int, tp: int, class_names=CLASS_NAMES) -> "ConfusionMatrix":
        return cls(counts=((int(tn), int(fp)), (int(fn), int(tp))), class_names=class_names)

    @property
    def tn(self) -> int:
        return self.counts[0][0]

    @property
    def fp(self) -> int:
        return self.counts[0][1]

    @property
    def fn(self) -> int:
        return self.counts[1][0]

    @property
    def tp(self) -> int:
        return self.counts[1][1]

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    @property
    def supports(self) -> tuple[int, int]:
        """Per-class sample counts (row sums)."""
        return (self.tn + self.fp, self.fn + self.tp)

    def as_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)


def confusion(true_labels, predicted_labels, class_names=CLASS_NAMES) -> ConfusionMatrix:
    """Count (true, predicted) pairs into a 2x2 matrix."""
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(predicted_labels, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise ValueError(f"label sequences differ in length: {t.shape[0]} vs {p.shape[0]}")
    if t.size and (t.min() < 0 or t.max() > 1 or p.min() < 0 or p.max() > 1):
        raise ValueError("labels must be 0 or 1")
    counts = np.zeros((2, 2), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts=tuple(tuple(int(c) for c in row) for row in counts), class_names=class_names)


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    """Rate with the degenerate-denominator convention: 0, flagged."""
    if den == 0:
        return 0.0, True
    return num / den, False


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    specificity: float
    f1: float
    support: int
    degenerate: bool = False  # some denominator was zero


@dataclass(frozen=True)
class Averages:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvaluationReport:
    """The full derived-metric catalogue for one model run."""

    confusion: ConfusionMatrix
    per_class: tuple[ClassMetrics, ClassMetrics]
    accuracy: float
    macro_avg: Averages
    weighted_avg: Averages
    mcc: float
    fpr: float
    fnr: float
    auc_roc: float | None = None

    def to_json(self) -> dict:
        return {
            "class_names": list(self.confusion.class_names),
            "confusion": [list(row) for row in self.confusion.counts],
            "per_class": [
                {
                    "class": self.confusion.class_names[i],
                    "precision": m.precision,
                    "recall": m.recall,
                    "specificity": m.specificity,
                    "f1": m.f1,
                    "support": m.support,
                    "degenerate": m.degenerate,
                }
                for i, m in enumerate(self.per_class)
            ],
            "accuracy": self.accuracy,
            "macro_avg": vars(self.macro_avg),
            "weighted_avg": vars(self.weighted_avg),
            "mcc": self.mcc,
            "fpr": self.fpr,
            "fnr": self.fnr,
            "auc_roc": self.auc_roc,
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    @classmethod
    def from_json(cls, obj: dict) -> "EvaluationReport":
        conf = ConfusionMatrix(
            counts=tuple(tuple(int(c) for c in row) for row in obj["confusion"]),
            class_names=tuple(obj["class_names"]),
        )
        per_class = tuple(
            ClassMetrics(
                precision=m["precision"],
                recall=m["recall"],
                specificity=m["specificity"],
                f1=m["f1"],
                support=m["support"],
                degenerate=m.get("degenerate", False),
            )
            for m in obj["per_class"]
        )
        return cls(
            confusion=conf,
            per_class=per_class,
            accuracy=obj["accuracy"],
            macro_avg=Averages(**obj["macro_avg"]),
            weighted_avg=Averages(**obj["weighted_avg"]),
            mcc=obj["mcc"],
            fpr=obj["fpr"],
            fnr=obj["fnr"],
            auc_roc=obj.get("auc_roc"),
        )

    @classmethod
    def load(cls, path) -> "EvaluationReport":
        with open(path) as f:
            return cls.from_json(json.load(f))


def report(conf: ConfusionMatrix, scores=None, true_labels=None) -> EvaluationReport:
    """Derive the complete report from a confusion matrix.

    ``scores``/``true_labels`` are optional aligned per-sample positive-class
    scores and truths for the same evaluated samples; when both are given the
    report includes ROC-AUC.
    """
    tn, fp, fn, tp = conf.tn, conf.fp, conf.fn, conf.tp
    total = conf.total
    if total == 0:
        raise ValueError("empty confusion matrix")

    per_class = []
    for cls_index in range(2):
        if cls_index == 1:  # positive class: parasitized
            c_tp, c_fp, c_fn, c_tn = tp, fp, fn, tn
        else:  # treat class 0 as the "positive" side of its own row
            c_tp, c_fp, c_fn, c_tn = tn, fn, fp, tp
        precision, d1 = _safe_div(c_tp, c_tp + c_fp)
        recall, d2 = _safe_div(c_tp, c_tp + c_fn)
        specificity, d3 = _safe_div(c_tn, c_tn + c_fp)
        f1, d4 = _safe_div(2 * precision * recall, precision + recall)
        per_class.append(
            ClassMetrics(
                precision=precision,
                recall=recall,
                specificity=specificity,
                f1=f1,
                support=conf.supports[cls_index],
                degenerate=d1 or d2 or d3 or d4,
            )
        )

    accuracy = (tp + tn) / total
    supports = conf.supports
    macro = Averages(
        precision=(per_class[0].precision + per_class[1].precision) / 2,
        recall=(per_class[0].recall + per_class[1].recall) / 2,
        f1=(per_class[0].f1 + per_class[1].f1) / 2,
        support=total,
    )
    weighted = Averages(
        precision=sum(m.precision * s for m, s in zip(per_class, supports)) / total,
        recall=sum(m.recall * s for m, s in zip(per_class, supports)) / total,
        f1=sum(m.f1 * s for m, s in zip(per_class, supports)) / total,
        support=total,
    )

    mcc_den = math.sqrt(float(tp + fp) * float(tp + fn) * float(tn + fp) * float(tn + fn))
    mcc = 0.0 if mcc_den == 0 else (float(tp) * tn - float(fp) * fn) / mcc_den
    fpr, _ = _safe_div(fp, fp + tn)
    fnr, _ = _safe_div(fn, fn + tp)

    auc = None
    if scores is not None:
        if true_labels is None:
            raise ValueError("scores require aligned true_labels for ROC-AUC")
        if len(np.asarray(true_labels).ravel()) != total:
            raise ValueError("scores/labels do not align with the confusion total")
        auc = auc_roc(true_labels, scores)

    return EvaluationReport(
        confusion=conf,
        per_class=tuple(per_class),
        accuracy=accuracy,
        macro_avg=macro,
        weighted_avg=weighted,
        mcc=mcc,
        fpr=fpr,
        fnr=fnr,
        auc_roc=auc,
    )


def evaluate(true_labels, predicted_labels, scores=None, class_names=CLASS_NAMES) -> EvaluationReport:
    """Convenience: confusion + report in one call."""
    conf = confusion(true_labels, predicted_labels, class_names=class_names)
    return report(conf, scores=scores, true_labels=true_labels if scores is not None else None)


def roc_points(true_labels, scores) -> list[tuple[float, float, float]]:
    """ROC curve as (threshold, fpr, tpr) rows, one per distinct score,
    sweeping from the strictest threshold to the most permissive."""
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if t.shape != s.shape:
        raise ValueError("labels and scores differ in length")
    pos = int(t.sum())
    neg = int(t.size - pos)
    if pos == 0 or neg == 0:
        raise ValueError("ROC is undefined for single-class inputs")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    t_sorted = t[order]
    points = [(math.inf, 0.0, 0.0)]
    tp = fp = 0
    i = 0
    n = t.size
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            tp += int(t_sorted[j])
            fp += int(1 - t_sorted[j])
            j += 1
        points.append((float(s_sorted[i]), fp / neg, tp / pos))
        i = j
    return points


def auc_roc(true_labels, scores) -> float:
    """Area under the ROC curve via trapezoidal integration of the
    threshold sweep; ties contribute half, so this equals the pairwise
    concordance probability."""
    points = roc_points(true_labels, scores)
    area = 0.0
    for (_, fpr0, tpr0), (_, fpr1, tpr1) in zip(points, points[1:]):
        area += (fpr1 - fpr0) * (tpr0 + tpr1) / 2.0
    return area


def _round2(x: float) -> float:
    return round(x, 2)  # half-even, keeps rendered tables deterministic


def render_report(rep: EvaluationReport) -> str:
    """Fixed-format text table in the published layout: one row per class,
    then accuracy, macro avg and weighted avg, rates at 2 decimals."""
    name_width = max(12, max(len(n) for n in rep.confusion.class_names))
    header = f"{'':>{name_width}}  {'precision':>9}  {'recall':>9}  {'f1-score':>9}  {'support':>9}"
    lines = [header, ""]
    for name, m in zip(rep.confusion.class_names, rep.per_class):
        lines.append(
            f"{name:>{name_width}}  {_round2(m.precision):>9.2f}  {_round2(m.recall):>9.2f}"
            f"  {_round2(m.f1):>9.2f}  {m.support:>9d}"
        )
    lines.append("")
    total = rep.confusion.total
    lines.append(f"{'accuracy':>{name_width}}  {'':>9}  {'':>9}  {_round2(rep.accuracy):>9.2f}  {total:>9d}")
    for label, avg in (("macro avg", rep.macro_avg), ("weighted avg", rep.weighted_avg)):
        lines.append(
            f"{label:>{name_width}}  {_round2(avg.precision):>9.2f}  {_round2(avg.recall):>9.2f}"
            f"  {_round2(avg.f1):>9.2f}  {avg.support:>9d}"
        )
    return "\n".join(lines) + "\n"


def save_roc_csv(points: list[tuple[float, float, float]], path) -> None:
    with open(path, "w") as f:
        f.write("threshold,fpr,tpr\n")
        for thr, fpr, tpr in points:
            f.write(f"{'inf' if math.isinf(thr) else repr(thr)},{fpr!r},{tpr!r}\n")
