"""Confusion matrices, P/R/F1, one-vs-rest ROC/AUC, and the inference timer.

Undefined ratios (0/0) are reported as 0 and the affected classes flagged,
so reports never carry NaNs. Headline averages are macro; support-weighted
averages are emitted alongside.
"""

import time
from dataclasses import dataclass, field

import numpy as np


def confusion(y_true, y_pred, k: int) -> np.ndarray:
    """K×K count matrix, rows = true class, cols = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"label lists differ in length: {y_true.shape} vs {y_pred.shape}")
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"{name} labels out of range [0,{k})")
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (y_true, y_pred), 1)
    return m


@dataclass
class MetricReport:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro: dict
    weighted: dict
    confusion_matrix: np.ndarray
    zero_division_classes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": {
                str(c): {
                    "precision": float(self.precision[c]),
                    "recall": float(self.recall[c]),
                    "f1": float(self.f1[c]),
                    "support": int(self.support[c]),
                }
                for c in range(len(self.support))
            },
            "macro": self.macro,
            "weighted": self.weighted,
            "confusion": self.confusion_matrix.tolist(),
            "zero_division_classes": list(self.zero_division_classes),
        }


def _safe_div(num, den):
    return np.where(den > 0, num / np.maximum(den, 1), 0.0)


def report(m: np.ndarray) -> MetricReport:
    """Per-class and averaged metrics from a confusion matrix."""
    m = np.asarray(m, dtype=np.int64)
    total = int(m.sum())
    if total == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(m).astype(np.float64)
    support = m.sum(axis=1)
    predicted = m.sum(axis=0)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    flagged = sorted(set(np.flatnonzero(predicted == 0).tolist())
                     | set(np.flatnonzero(support == 0).tolist()))
    macro = {"precision": float(precision.mean()),
             "recall": float(recall.mean()),
             "f1": float(f1.mean())}
    w = support / total
    weighted = {"precision": float((precision * w).sum()),
                "recall": float((recall * w).sum()),
                "f1": float((f1 * w).sum())}
    return MetricReport(
        accuracy=float(tp.sum() / total),
        precision=precision, recall=recall, f1=f1, support=support,
        macro=macro, weighted=weighted, confusion_matrix=m,
        zero_division_classes=[int(c) for c in flagged],
    )


@dataclass
class RocCurve:
    class_id: int
    thresholds: list        # descending; first entry predicts nothing positive
    points: list            # (fpr, tpr) pairs aligned with thresholds
    auc: float


def roc_auc(scores: np.ndarray, labels, class_id: int) -> RocCurve:
    """One-vs-rest ROC for one class with trapezoidal AUC.

    scores is N×K per-sample probability (or score) vectors; thresholds sit at
    the distinct scores for the class. The curve starts at (0,0) and ends at
    (1,1).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    s = scores[:, class_id]
    pos = labels == class_id
    n_pos = int(pos.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"class {class_id} needs both positive and negative samples")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    pos_sorted = pos[order]
    distinct = np.flatnonzero(np.diff(s_sorted) != 0)
    block_ends = np.r_[distinct, len(s_sorted) - 1]
    cum_tp = np.cumsum(pos_sorted)
    cum_fp = np.cumsum(~pos_sorted)

    thresholds = [float(s_sorted[0] + 1.0)]
    points = [(0.0, 0.0)]
    for end in block_ends:
        thresholds.append(float(s_sorted[end]))
        points.append((cum_fp[end] / n_neg, cum_tp[end] / n_pos))
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(class_id=class_id, thresholds=thresholds,
                    points=[(float(a), float(b)) for a, b in points], auc=auc)


@dataclass
class TimingReport:
    median: float
    p95: float
    n: int
    warmup: int
    times: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"median_s": self.median, "p95_s": self.p95,
                "n": self.n, "warmup": self.warmup}


def time_inference(predict_fn, samples, n_warmup: int = 10,
                   n_runs: int = 100) -> TimingReport:
    """Per-sample wall-clock timing, warmup excluded, run sequentially.

    Cycles through the provided samples; reports median and p95 seconds.
    """
    if n_runs < 10:
        raise ValueError(f"n_runs must be >= 10, got {n_runs}")
    if not samples:
        raise ValueError("need at least one sample to time")
    cycle = [samples[i % len(samples)] for i in range(n_warmup + n_runs)]
    for x in cycle[:n_warmup]:
        predict_fn(x)
    times = []
    for x in cycle[n_warmup:]:
        t0 = time.perf_counter()
        predict_fn(x)
        times.append(time.perf_counter() - t0)
    arr = np.asarray(times)
    return TimingReport(median=float(np.median(arr)),
                        p95=float(np.percentile(arr, 95)),
                        n=len(times), warmup=n_warmup, times=times)
