"""Confusion-matrix metrics, ROC / precision-recall curves and report writers."""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .raster import AlignmentError, BinaryMask

logger = logging.getLogger(__name__)

REFERENCE_OPERATING_POINTS = {
    # threshold -> values reported for the original Mount Gambier data
    0.9: {"TPR": 0.76, "FPR": 0.03, "precision": 0.77},
    0.2: {"TPR": 0.89, "FPR": 0.07, "precision": 0.63},
}


class UndefinedCurveError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    TP: int
    TN: int
    FP: int
    FN: int

    def __post_init__(self):
        for k in ("TP", "TN", "FP", "FN"):
            v = getattr(self, k)
            if int(v) != v or v < 0:
                raise ValueError(f"{k} must be a non-negative integer count")
            object.__setattr__(self, k, int(v))

    @property
    def total(self) -> int:
        return self.TP + self.TN + self.FP + self.FN

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MetricsReport:
    FDR: float
    TPR: float
    TNR: float
    FOR: float
    FPR: float
    precision: float
    recall: float
    accuracy: float

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_from_labels(pred, truth) -> ConfusionMatrix:
    pred = np.asarray(pred).astype(bool).ravel()
    truth = np.asarray(truth).astype(bool).ravel()
    if pred.shape != truth.shape:
        raise AlignmentError("prediction and truth differ in size")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionMatrix(tp, pred.size - tp - fp - fn, fp, fn)


def confusion(pred: BinaryMask, truth: BinaryMask,
              region: tuple[int, int] | None = None) -> ConfusionMatrix:
    """Counts over the pixels of a column interval (the whole grid by default)."""
    if pred.geometry != truth.geometry:
        raise AlignmentError("prediction and truth masks have different geometry")
    c0, c1 = region if region is not None else (0, pred.geometry.width)
    if not 0 <= c0 < c1 <= pred.geometry.width:
        raise ValueError(f"region {region} outside width {pred.geometry.width}")
    return confusion_from_labels(pred.values[:, c0:c1], truth.values[:, c0:c1])


def _ratio(num: int, den: int, empty: float) -> float:
    return num / den if den else empty


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Rates from a confusion matrix.

    Empty denominators: FDR and FOR are 0, TPR is 1 when there are no
    positives, TNR is 1 when there are no negatives, accuracy is 1 on an
    empty matrix.
    """
    tp, tn, fp, fn = cm.TP, cm.TN, cm.FP, cm.FN
    if tp + fn == 0:
        warnings.warn("no positive pixels; TPR set to 1", RuntimeWarning, stacklevel=2)
    fdr = _ratio(fp, fp + tp, 0.0)
    tpr = _ratio(tp, tp + fn, 1.0)
    tnr = _ratio(tn, tn + fp, 1.0)
    return MetricsReport(
        FDR=fdr,
        TPR=tpr,
        TNR=tnr,
        FOR=_ratio(fn, fn + tn, 0.0),
        FPR=1.0 - tnr,
        precision=1.0 - fdr,
        recall=tpr,
        accuracy=_ratio(tp + tn, cm.total, 1.0),
    )


# --- curves -------------------------------------------------------------------


@dataclass
class CurveSeries:
    """Curve points ``(x, y, threshold)``, thresholds strictly decreasing."""

    x: np.ndarray
    y: np.ndarray
    thresholds: np.ndarray
    auc: float
    kind: str = "roc"

    def points(self):
        return list(zip(self.x.tolist(), self.y.tolist(), self.thresholds.tolist()))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "x", "y"])
            for x, y, t in self.points():
                w.writerow([repr(t), repr(x), repr(y)])
        return path


def _sweep(scores, truth):
    """Cumulative (TP, FP) counts at each distinct score, highest first.

    A leading entry with threshold +inf represents predicting nothing positive.
    """
    s = np.asarray(scores, dtype=float).ravel()
    t = np.asarray(truth).astype(bool).ravel()
    if s.shape != t.shape:
        raise AlignmentError("scores and truth differ in size")
    if np.isnan(s).any():
        raise ValueError("scores contain NaN")
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedCurveError("curve needs at least one positive and one negative label")
    order = np.argsort(-s, kind="mergesort")
    s, t = s[order], t[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    tp = np.cumsum(t)[last]
    fp = (last + 1) - tp
    thresholds = np.r_[np.inf, s[last]]
    return np.r_[0, tp], np.r_[0, fp], thresholds, n_pos, n_neg


def roc_curve(scores, truth) -> CurveSeries:
    tp, fp, thr, n_pos, n_neg = _sweep(scores, truth)
    fpr = fp / n_neg
    tpr = tp / n_pos
    return CurveSeries(fpr, tpr, thr, float(np.trapezoid(tpr, fpr)), "roc")


def prc_curve(scores, truth) -> CurveSeries:
    """Precision against recall; the recall-0 point takes the precision of the top group."""
    tp, fp, thr, n_pos, _ = _sweep(scores, truth)
    recall = tp / n_pos
    precision = np.empty(len(tp))
    precision[1:] = tp[1:] / (tp[1:] + fp[1:])
    precision[0] = precision[1]
    return CurveSeries(recall, precision, thr, float(np.trapezoid(precision, recall)), "prc")


def operating_point(scores, truth, threshold: float) -> tuple[ConfusionMatrix, MetricsReport]:
    """Metrics of the inclusive threshold rule ``score >= threshold``."""
    pred = np.asarray(scores, dtype=float) >= threshold
    cm = confusion_from_labels(pred, truth)
    return cm, compute_metrics(cm)


def tpr_at_fdr(scores, truth, max_fdr: float) -> float:
    """Best TPR over the threshold sweep among points with FDR <= ``max_fdr``."""
    tp, fp, _, n_pos, _ = _sweep(scores, truth)
    pred_pos = tp + fp
    fdr = np.where(pred_pos > 0, fp / np.maximum(pred_pos, 1), 0.0)
    ok = fdr <= max_fdr + 1e-12
    return float((tp[ok] / n_pos).max()) if ok.any() else 0.0


# --- report writers -------------------------------------------------------------


def metrics_table(rows: Sequence[tuple[str, str, ConfusionMatrix]]) -> str:
    """Aligned plain-text table of counts and rates, one line per (set, function) row."""
    head = f"{'Set':<12}{'Function':<12}{'TP':>9}{'TN':>10}{'FP':>9}{'FN':>9}" \
           f"{'FDR':>8}{'TPR':>8}{'TNR':>8}{'FOR':>8}{'ACC':>8}"
    lines = [head, "-" * len(head)]
    for region, func, cm in rows:
        m = compute_metrics(cm)
        lines.append(
            f"{region:<12}{func:<12}{cm.TP:>9}{cm.TN:>10}{cm.FP:>9}{cm.FN:>9}"
            f"{m.FDR:>8.3f}{m.TPR:>8.3f}{m.TNR:>8.3f}{m.FOR:>8.3f}{m.accuracy:>8.3f}"
        )
    return "\n".join(lines) + "\n"


def write_json(obj: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _polyline(xs, ys, x0, y0, w, h):
    pts = " ".join(f"{x0 + x * w:.2f},{y0 + (1 - y) * h:.2f}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="black" stroke-width="1.5" points="{pts}"/>'


def curves_svg(roc: CurveSeries, prc: CurveSeries, markers: Sequence[float] = (0.9, 0.2),
               title: str = "") -> str:
    """Two stacked panels (ROC above PRC) with markers at the given thresholds."""
    W, H, pad, ph = 420, 760, 50, 300
    styles = {0: ("#1f4fd1", "6,4"), 1: ("#d11f1f", "none")}
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>']
    if title:
        out.append(f'<text x="{W / 2}" y="18" text-anchor="middle">{title}</text>')
    panels = [(roc, "False positive rate", "True positive rate", 40),
              (prc, "Recall", "Precision", 40 + ph + 70)]
    for curve, xl, yl, top in panels:
        x0, w, h = pad, W - 2 * pad, ph
        out.append(f'<rect x="{x0}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#888"/>')
        for k in range(6):
            v = k / 5
            out.append(f'<text x="{x0 + v * w:.1f}" y="{top + h + 14}" text-anchor="middle">{v:.1f}</text>')
            out.append(f'<text x="{x0 - 6}" y="{top + (1 - v) * h + 4:.1f}" text-anchor="end">{v:.1f}</text>')
        out.append(f'<text x="{x0 + w / 2}" y="{top + h + 30}" text-anchor="middle">{xl}</text>')
        out.append(f'<text x="{x0 - 36}" y="{top + h / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 {x0 - 36} {top + h / 2})">{yl}</text>')
        out.append(f'<text x="{x0 + w - 4}" y="{top + 14}" text-anchor="end">'
                   f'AUC = {curve.auc:.3f}</text>')
        out.append(_polyline(curve.x, curve.y, x0, top, w, h))
        for i, p in enumerate(markers):
            color, dash = styles.get(i, ("#444", "2,2"))
            # the last sweep point with threshold >= p is the inclusive operating point
            j = int(np.flatnonzero(curve.thresholds >= p).max())
            xv, yv = curve.x[j], curve.y[j]
            out.append(f'<line x1="{x0 + xv * w:.2f}" y1="{top}" x2="{x0 + xv * w:.2f}" '
                       f'y2="{top + h}" stroke="{color}" stroke-dasharray="{dash}"/>')
            out.append(f'<circle cx="{x0 + xv * w:.2f}" cy="{top + (1 - yv) * h:.2f}" r="3.5" '
                       f'fill="{color}"/>')
            out.append(f'<text x="{x0 + xv * w + 5:.2f}" y="{top + (1 - yv) * h - 6:.2f}" '
                       f'fill="{color}">p = {p:g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
