"""Binary-classification metrics where positive means abnormal traffic.

Undefined ratios raise :class:`UndefinedMetricError` instead of returning a
sentinel.  The one exception is F1, which is 0 when there are no true
positives but some errors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ctranatd.errors import UndefinedMetricError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    # cumulative integer counts behind each point, when built from scores
    fps: np.ndarray | None = None
    tps: np.ndarray | None = None

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))

    def __len__(self) -> int:
        return len(self.fpr)


def _as_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Tally predictions, calling a sample positive when ``score >= threshold``."""
    s, y = _as_binary(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise UndefinedMetricError("accuracy of zero samples")
    return (c.tp + c.tn) / c.total


def recall(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        raise UndefinedMetricError("recall is undefined without positive samples")
    return c.tp / (c.tp + c.fn)


def precision_f1(c: ConfusionCounts) -> tuple[float, float]:
    """Return ``(precision, f1)``.

    When only one denominator is zero the affected ratio has nothing to
    count; if ``tp == 0`` and errors exist, F1 is 0 by convention and the
    missing precision is reported as 0 as well.
    """
    pp, ap = c.tp + c.fp, c.tp + c.fn
    if pp == 0 and ap == 0:
        raise UndefinedMetricError("precision and recall both undefined (no positives at all)")
    if c.tp == 0:
        return (0.0, 0.0)
    p = c.tp / pp
    r = c.tp / ap
    return p, 2.0 * p * r / (p + r)


def f1_score(c: ConfusionCounts) -> float:
    return precision_f1(c)[1]


def roc_curve(scores, labels) -> RocCurve:
    """ROC points for thresholds +inf then each distinct score, descending.

    Tied scores share one threshold, so each distinct value adds a single
    point.  The first point is (0, 0) and the last is (1, 1).
    """
    s, y = _as_binary(scores, labels)
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs both classes present")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    tps = np.cumsum(y_sorted)
    fps = np.cumsum(1 - y_sorted)
    # last index of each run of equal scores
    last = np.r_[np.nonzero(np.diff(s_sorted))[0], s_sorted.size - 1]
    tp_counts = np.r_[0, tps[last]]
    fp_counts = np.r_[0, fps[last]]
    return RocCurve(
        fpr=fp_counts / n_neg,
        tpr=tp_counts / n_pos,
        thresholds=np.r_[np.inf, s_sorted[last]],
        fps=fp_counts,
        tps=tp_counts,
    )


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under ``tpr`` as a function of ``fpr``.

    Curves from :func:`roc_curve` carry integer counts, so the sum is done
    exactly in integers and divided once at the end.
    """
    fpr, tpr = curve.fpr, curve.tpr
    if len(fpr) < 2 or fpr[0] != 0.0 or tpr[0] != 0.0 or fpr[-1] != 1.0 or tpr[-1] != 1.0:
        raise ValueError("ROC curve must run from (0, 0) to (1, 1)")
    if np.any(np.diff(fpr) < 0) or np.any(np.diff(tpr) < 0):
        raise ValueError("ROC curve must be non-decreasing")
    if curve.fps is not None and curve.tps is not None:
        fps = [int(v) for v in curve.fps]
        tps = [int(v) for v in curve.tps]
        twice_area = sum((fps[i] - fps[i - 1]) * (tps[i] + tps[i - 1]) for i in range(1, len(fps)))
        return twice_area / (2 * fps[-1] * tps[-1])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1])) / 2.0)


def roc_auc(scores, labels) -> float:
    return auc(roc_curve(scores, labels))


def summarize(scores, labels, threshold: float = 0.5) -> dict[str, float]:
    """Accuracy, recall, precision, F1 and AUC in one dict.

    Entries that are undefined for this sample (e.g. recall with no
    positives) come back as NaN so a batch of repetitions can still be
    tabulated.
    """
    c = confusion(scores, labels, threshold)
    out = {"accuracy": accuracy(c)}
    try:
        out["recall"] = recall(c)
    except UndefinedMetricError:
        out["recall"] = float("nan")
    try:
        out["precision"], out["f1"] = precision_f1(c)
    except UndefinedMetricError:
        out["precision"] = out["f1"] = float("nan")
    try:
        out["auc"] = roc_auc(scores, labels)
    except UndefinedMetricError:
        out["auc"] = float("nan")
    out.update(tp=c.tp, fp=c.fp, tn=c.tn, fn=c.fn)
    return out
