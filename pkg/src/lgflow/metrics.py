"""Anomaly-score metrics: AUC-ROC, AUC-PR, VUS-ROC/PR and F1 variants.

All curve metrics accept soft labels in [0, 1]: a point counts as a positive
with weight ``y`` and as a negative with weight ``1 - y``. With hard labels
this is the usual definition. AUC-ROC is the trapezoidal area (ties get half
credit); AUC-PR is average precision over distinct score thresholds.
"""

import csv
from dataclasses import asdict, dataclass

import numpy as np

FORMAT_VERSION = 1


@dataclass
class MetricReport:
    auc_roc: float
    auc_pr: float
    vus_roc: float
    vus_pr: float
    f1_standard: float
    f1_point_adjusted: float
    threshold: float
    max_buffer: int


def _prep(scores, labels, valid_mask=None):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equally long")
    if valid_mask is not None:
        m = np.asarray(valid_mask, dtype=bool)
        s, y = s[m], y[m]
    return s, y


def _sweep(s, y):
    """Cumulative weighted TP/FP at each distinct threshold, highest score first."""
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(1.0 - y)[last]
    return tp, fp


def auc_roc(scores, labels, valid_mask=None):
    s, y = _prep(scores, labels, valid_mask)
    tp, fp = _sweep(s, y)
    P, N = tp[-1], fp[-1]
    if P <= 0 or N <= 0:
        raise ValueError("AUC-ROC needs both classes")
    tpr = np.r_[0.0, tp / P]
    fpr = np.r_[0.0, fp / N]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def auc_pr(scores, labels, valid_mask=None):
    s, y = _prep(scores, labels, valid_mask)
    tp, fp = _sweep(s, y)
    P = tp[-1]
    if P <= 0:
        raise ValueError("AUC-PR needs positive labels")
    precision = tp / (tp + fp)
    recall = np.r_[0.0, tp / P]
    return float(np.sum(np.diff(recall) * precision))


def soft_labels(labels, buffer):
    """Extend every anomalous segment by ``buffer`` steps per side, decaying linearly.

    At distance ``d`` (1..buffer) outside a segment the weight is
    ``1 - d / (buffer + 1)``; overlapping extensions take the maximum.
    """
    lab = np.asarray(labels, dtype=np.float64)
    out = lab.copy()
    if buffer <= 0:
        return out
    T = len(lab)
    pos = np.flatnonzero(lab > 0)
    for d in range(1, buffer + 1):
        wgt = 1.0 - d / (buffer + 1.0)
        for idx in (pos - d, pos + d):
            idx = idx[(idx >= 0) & (idx < T)]
            np.maximum.at(out, idx, wgt)
    return out


def vus(scores, labels, metric="pr", max_buffer=4, valid_mask=None):
    """Mean of the soft-label AUC over buffers 0..max_buffer."""
    if max_buffer < 0:
        raise ValueError("max_buffer must be >= 0")
    fn = {"pr": auc_pr, "roc": auc_roc}[metric]
    vals = [fn(scores, soft_labels(labels, ell), valid_mask) for ell in range(max_buffer + 1)]
    return float(np.mean(vals))


def _f1(pred, y):
    tp = np.sum(pred & y)
    fp = np.sum(pred & ~y)
    fn = np.sum(~pred & y)
    return 0.0 if tp == 0 else float(2 * tp / (2 * tp + fp + fn))


def point_adjust(pred, labels):
    """Mark a whole true segment detected when any of its points is flagged."""
    pred = np.asarray(pred, dtype=bool).copy()
    y = np.asarray(labels).astype(bool)
    edges = np.diff(np.concatenate([[0], y.astype(np.int8), [0]]))
    for a, b in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
        if pred[a:b].any():
            pred[a:b] = True
    return pred


def f1_from_flags(flags, labels, valid_mask=None):
    f, y = _prep(np.asarray(flags, dtype=np.float64), labels, valid_mask)
    pred, yb = f > 0, y > 0
    return _f1(pred, yb), _f1(point_adjust(pred, yb), yb)


def f1_scores(scores, labels, threshold=None, valid_mask=None):
    """(standard F1, point-adjusted F1).

    ``threshold`` flags ``score >= threshold``. With ``threshold=None`` every
    distinct score is tried and, per metric, the best F1 is returned together
    with the threshold that produced the best standard F1.
    """
    s, y = _prep(scores, labels, valid_mask)
    yb = y > 0
    if threshold is not None:
        pred = s >= threshold
        return _f1(pred, yb), _f1(point_adjust(pred, yb), yb), float(threshold)
    best_std, best_pa, best_thr = 0.0, 0.0, float(np.max(s)) if len(s) else 0.0
    for thr in np.unique(s):
        pred = s >= thr
        f_std = _f1(pred, yb)
        if f_std > best_std:
            best_std, best_thr = f_std, float(thr)
        best_pa = max(best_pa, _f1(point_adjust(pred, yb), yb))
    return best_std, best_pa, best_thr


def evaluate(scores, labels, valid_mask=None, max_buffer=4, threshold=None):
    f_std, f_pa, thr = f1_scores(scores, labels, threshold, valid_mask)
    return MetricReport(
        auc_roc=auc_roc(scores, labels, valid_mask),
        auc_pr=auc_pr(scores, labels, valid_mask),
        vus_roc=vus(scores, labels, "roc", max_buffer, valid_mask),
        vus_pr=vus(scores, labels, "pr", max_buffer, valid_mask),
        f1_standard=f_std,
        f1_point_adjusted=f_pa,
        threshold=thr,
        max_buffer=max_buffer,
    )


def write_reports(rows, path):
    """``rows``: iterable of (dataset, source, window, MetricReport)."""
    names = list(MetricReport.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(["dataset", "source", "window"] + names)
        for dataset, source, window, rep in rows:
            d = asdict(rep)
            w.writerow([dataset, source, window] + [d[n] for n in names])
