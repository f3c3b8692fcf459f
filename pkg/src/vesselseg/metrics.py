"""Segmentation metrics: confusion counts, rates, MCC and tie-aware ROC-AUC.

Vessel is the positive class.  Rates whose denominator is zero are reported
as ``None`` rather than 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateClasses, DimensionMismatch, EmptyEvaluation
from .raster import check_mask


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricReport:
    tpr: float | None
    tnr: float | None
    accuracy: float | None
    f1: float | None
    mcc: float | None
    auc: float | None = None
    roc: list = field(default_factory=list)


def _select(pred, gt, fov):
    pred = check_mask(pred, name="prediction")
    gt = check_mask(gt, name="ground truth")
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if fov is None:
        return pred.ravel(), gt.ravel()
    fov = check_mask(fov, gt.shape, "fov")
    return pred[fov], gt[fov]


def confusion(pred, gt, fov=None):
    """Pixel counts inside ``fov`` (whole image when absent)."""
    p, g = _select(pred, gt, fov)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return ConfusionMatrix(tp, fp, tn, fn)


def _ratio(num, den):
    return None if den == 0 else num / den


def metrics(cm):
    """Rates, F1 and MCC of a confusion matrix (no AUC)."""
    if cm.total <= 0:
        raise EmptyEvaluation("confusion matrix is empty")
    tp, fp, tn, fn = cm.tp, cm.fp, cm.tn, cm.fn
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = None if den == 0 else (tp * tn - fp * fn) / math.sqrt(den)
    return MetricReport(
        tpr=_ratio(tp, tp + fn),
        tnr=_ratio(tn, tn + fp),
        accuracy=(tp + tn) / cm.total,
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        mcc=mcc,
    )


def roc_auc(scores, gt, fov=None):
    """Mann-Whitney AUC and ROC staircase of a score map.

    ``AUC = (concordant + tied / 2) / (P * N)`` over all positive/negative
    pairs, counted from the sorted distinct score levels.  ROC points run from
    (0, 0) to (1, 1), one per distinct threshold.

    Returns
    -------
    auc : float
    roc : list of (fpr, tpr)
    """
    s = np.asarray(scores, dtype=np.float64)
    g = check_mask(gt, name="ground truth") if np.ndim(gt) == 2 else np.asarray(gt, dtype=bool)
    if s.shape != g.shape:
        raise DimensionMismatch(f"scores {s.shape} vs ground truth {g.shape}")
    if fov is not None:
        fov = np.asarray(fov, dtype=bool)
        if fov.shape != g.shape:
            raise DimensionMismatch(f"fov {fov.shape} vs ground truth {g.shape}")
        s, g = s[fov], g[fov]
    s, g = s.ravel(), g.ravel()
    n_pos = int(g.sum())
    n_neg = int(g.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClasses("need at least one positive and one negative pixel")
    levels, inverse = np.unique(s, return_inverse=True)
    pos = np.bincount(inverse.ravel(), weights=g, minlength=len(levels)).astype(np.int64)
    neg = np.bincount(inverse.ravel(), minlength=len(levels)).astype(np.int64) - pos
    neg_below = np.concatenate([[0], np.cumsum(neg)[:-1]])
    concordant = int(np.dot(pos, neg_below))
    tied = int(np.dot(pos, neg))
    auc = (2 * concordant + tied) / (2 * n_pos * n_neg)
    # descending thresholds
    tp = np.cumsum(pos[::-1])
    fp = np.cumsum(neg[::-1])
    roc = [(0.0, 0.0)] + [(f / n_neg, t / n_pos) for f, t in zip(fp.tolist(), tp.tolist())]
    return auc, roc


def evaluate(pred, gt, fov=None, scores=None):
    """Full :class:`MetricReport`; AUC and ROC only when scores are given."""
    report = metrics(confusion(pred, gt, fov))
    if scores is not None:
        report.auc, report.roc = roc_auc(scores, gt, fov)
    return report
