"""Segmentation and grading metrics: overlap scores, Hausdorff distance,
per-grade classification report, ROC/AUC and McNemar's test."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage, stats

from .errors import InputError, ShapeError
from .pseudomask import GRADES, Grade


@dataclass(frozen=True)
class SegScore:
    dice: float
    iou: float
    precision: float
    recall: float
    specificity: float


def _masks(a, b):
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def seg_score(pred, gt) -> SegScore:
    """Count-based overlap scores. Two empty masks score a perfect 1 everywhere."""
    pred, gt = _masks(pred, gt)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(np.count_nonzero(~pred & ~gt))
    if tp + fp + fn == 0:
        return SegScore(1.0, 1.0, 1.0, 1.0, 1.0)
    return SegScore(
        dice=2 * tp / (2 * tp + fp + fn),
        iou=tp / (tp + fp + fn),
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        specificity=tn / (tn + fp) if tn + fp else 1.0,
    )


def hausdorff(a, b, percentile: float = 100.0) -> float:
    """Symmetric Hausdorff distance between pixel-centre sets (Euclidean).

    Both empty gives 0, exactly one empty gives ``inf``. ``percentile=95``
    yields the robust HD95 variant.
    """
    a, b = _masks(a, b)
    na, nb = a.any(), b.any()
    if not na and not nb:
        return 0.0
    if na != nb:
        return math.inf
    # distance from every pixel to the nearest foreground pixel of the other set
    to_b = ndimage.distance_transform_edt(~b)
    to_a = ndimage.distance_transform_edt(~a)
    d_ab = to_b[a]
    d_ba = to_a[b]
    if percentile >= 100.0:
        return float(max(d_ab.max(), d_ba.max()))
    return float(max(np.percentile(d_ab, percentile), np.percentile(d_ba, percentile)))


# --------------------------------------------------------------------------
# Classification


@dataclass
class ClassReport:
    labels: list
    confusion: list          # rows = true grade, cols = predicted grade
    precision: dict
    recall: dict
    specificity: dict
    f1: dict
    support: dict
    macro: dict
    accuracy: float
    undefined: list          # (metric, grade) pairs that hit a zero denominator

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num, den, flag, undefined):
    if den == 0:
        undefined.append(flag)
        return 0.0
    return num / den


def classification_report(pred, true, labels=GRADES) -> ClassReport:
    pred = [Grade.parse(p) for p in pred]
    true = [Grade.parse(t) for t in true]
    if not true:
        raise InputError("classification report needs at least one label")
    if len(pred) != len(true):
        raise InputError(f"{len(pred)} predictions for {len(true)} labels")
    labels = list(labels)
    index = {g: i for i, g in enumerate(labels)}
    cm = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(true, pred):
        cm[index[t], index[p]] += 1
    total = int(cm.sum())

    prec, rec, spec, f1, sup = {}, {}, {}, {}, {}
    undefined = []
    for g, i in index.items():
        tp = int(cm[i, i])
        fp = int(cm[:, i].sum()) - tp
        fn = int(cm[i, :].sum()) - tp
        tn = total - tp - fp - fn
        key = g.value
        prec[key] = _ratio(tp, tp + fp, ("precision", key), undefined)
        rec[key] = _ratio(tp, tp + fn, ("recall", key), undefined)
        spec[key] = _ratio(tn, tn + fp, ("specificity", key), undefined)
        f1[key] = _ratio(2 * prec[key] * rec[key], prec[key] + rec[key], ("f1", key), undefined)
        sup[key] = int(cm[i, :].sum())
    k = len(labels)
    macro = {
        "precision": sum(prec.values()) / k,
        "recall": sum(rec.values()) / k,
        "specificity": sum(spec.values()) / k,
        "f1": sum(f1.values()) / k,
    }
    return ClassReport(
        labels=[g.value for g in labels], confusion=cm.tolist(), precision=prec, recall=rec,
        specificity=spec, f1=f1, support=sup, macro=macro,
        accuracy=int(np.trace(cm)) / total, undefined=undefined,
    )


def roc_curve(scores, labels):
    """ROC points (fpr, tpr) over every distinct score threshold, highest first."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise InputError("scores and labels must be equal-length 1-D sequences")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InputError("ROC analysis needs both classes present")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each block of tied scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    return fpr, tpr


def roc_auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve; tied scores contribute half credit."""
    fpr, tpr = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def mcnemar(correct_a, correct_b) -> tuple[float, float]:
    """Continuity-corrected McNemar chi-square (1 df), exact binomial p below 25 discordant pairs."""
    a = np.asarray(correct_a).astype(bool)
    b_ = np.asarray(correct_b).astype(bool)
    if a.shape != b_.shape:
        raise InputError("correctness vectors differ in length")
    b = int(np.count_nonzero(a & ~b_))
    c = int(np.count_nonzero(~a & b_))
    n = b + c
    if n == 0:
        return 0.0, 1.0
    statistic = (abs(b - c) - 1) ** 2 / n
    if n < 25:
        p = min(1.0, 2.0 * stats.binom.cdf(min(b, c), n, 0.5))
    else:
        p = float(stats.chi2.sf(statistic, 1))
    return float(statistic), float(p)


# --------------------------------------------------------------------------
# Table output


def seg_table(rows: dict) -> str:
    """Aligned text table; ``rows`` maps a row label to a SegScore or dict."""
    cols = ["dice", "iou", "precision", "recall", "specificity"]
    width = max([len(str(k)) for k in rows] + [8])
    lines = [f"{'':<{width}}  " + "  ".join(f"{c:>11}" for c in cols)]
    for name, score in rows.items():
        d = asdict(score) if isinstance(score, SegScore) else score
        lines.append(f"{name:<{width}}  " + "  ".join(f"{d[c]:>11.4f}" for c in cols))
    return "\n".join(lines) + "\n"


def class_table(rep: ClassReport) -> str:
    cols = ["precision", "recall", "specificity", "f1"]
    lines = [f"{'grade':<6}  " + "  ".join(f"{c:>11}" for c in cols) + f"  {'support':>7}"]
    for g in rep.labels:
        vals = [getattr(rep, c)[g] for c in cols]
        lines.append(f"{g:<6}  " + "  ".join(f"{v:>11.4f}" for v in vals) + f"  {rep.support[g]:>7d}")
    lines.append(f"{'macro':<6}  " + "  ".join(f"{rep.macro[c]:>11.4f}" for c in cols)
                 + f"  {sum(rep.support.values()):>7d}")
    lines.append(f"accuracy {rep.accuracy:.4f}")
    return "\n".join(lines) + "\n"


def _plain(o):
    if isinstance(o, (SegScore, ClassReport)):
        o = asdict(o)
    if isinstance(o, dict):
        return {k: _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, (np.floating, np.integer)):
        o = o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return None
    return o


def to_json(obj) -> str:
    """JSON text with dataclasses expanded and non-finite floats written as null."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False)
