"""Localization and detection metrics.

Localization: per-query translation/orientation error, threshold recalls,
mean/std summary (population std) and empirical CDFs.

Detection: IoU, AP with 101-point interpolation at one IoU threshold or
averaged over 0.50:0.05:0.95, F1-confidence curves and a confusion matrix
with a background row/column.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict
import json
import math

import numpy as np

from .camera import GeoPose
from .errors import ValidationError

DEFAULT_BANDS = ((0.25, 2.0), (0.5, 5.0), (5.0, 10.0))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
COCO_IOUS = np.linspace(0.5, 0.95, 10)
BACKGROUND = "background"


# ------------------------------------------------------------ localization

def rotation_angle_deg(r_a, r_b):
    cos = (np.trace(np.asarray(r_a).T @ np.asarray(r_b)) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, cos))))


def pose_errors(est: GeoPose, gt: GeoPose):
    """(translation m, orientation deg) between two poses in the same zone."""
    gt.check_zone(est.zone, est.hemisphere)
    t = float(np.linalg.norm(est.pose.center - gt.pose.center))
    return t, rotation_angle_deg(est.pose.rotation, gt.pose.rotation)


def threshold_recall(trans, orient, bands=DEFAULT_BANDS, localized=None):
    """Joint and marginal recalls per (metres, degrees) band.

    ``localized`` marks queries that produced a pose; the others count as
    misses. Returns ``{"joint": [...], "translation": [...], "orientation": [...]}``.
    """
    trans = np.asarray(trans, dtype=float)
    orient = np.asarray(orient, dtype=float)
    n = len(trans)
    if localized is None:
        localized = np.ones(n, dtype=bool)
    localized = np.asarray(localized, dtype=bool)
    out = {"joint": [], "translation": [], "orientation": []}
    if n == 0:
        for key in out:
            out[key] = [0.0] * len(bands)
        return out
    t = np.where(localized, trans, np.inf)
    r = np.where(localized, orient, np.inf)
    for bt, br in bands:
        out["joint"].append(float(np.mean((t <= bt) & (r <= br))))
        out["translation"].append(float(np.mean(t <= bt)))
        out["orientation"].append(float(np.mean(r <= br)))
    return out


def error_summary(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValidationError("no errors to summarize")
    return float(v.mean()), float(v.std())


def cdf(values):
    """[(error, fraction <= error)] at each distinct error value."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValidationError("no errors for a CDF")
    uniq = np.unique(v)
    counts = np.searchsorted(v, uniq, side="right")
    return [(float(x), c / v.size) for x, c in zip(uniq, counts)]


TABLE2_ROWS = (
    ("Mean Translation Error (m)", "mean_translation"),
    ("Standard Deviation Translation Error (m)", "std_translation"),
    ("Mean Orientation Error (°)", "mean_orientation"),
    ("Standard Deviation Orientation Error (°)", "std_orientation"),
)


def render_summary_table(mean_t, std_t, mean_r, std_r, digits=2):
    """Aligned two-column Metric/Value table of the localization summary."""
    values = dict(mean_translation=mean_t, std_translation=std_t,
                  mean_orientation=mean_r, std_orientation=std_r)
    rows = [(label, f"{values[key]:.{digits}f}") for label, key in TABLE2_ROWS]
    w1 = max(len("Metric"), *(len(r[0]) for r in rows))
    w2 = max(len("Value"), *(len(r[1]) for r in rows))
    rule = f"+{'-' * (w1 + 2)}+{'-' * (w2 + 2)}+"
    lines = [rule, f"| {'Metric':<{w1}} | {'Value':^{w2}} |", rule]
    lines += [f"| {a:<{w1}} | {b:>{w2}} |" for a, b in rows]
    lines.append(rule)
    return "\n".join(lines)


@dataclass
class QueryError:
    name: str
    translation: float | None
    orientation: float | None
    status: str  # registered | anchored | failed


@dataclass
class LocalizationReport:
    queries: list
    mean_translation: float
    std_translation: float
    mean_orientation: float
    std_orientation: float
    bands: list
    recall_joint: list
    recall_translation: list
    recall_orientation: list
    cdf_translation: list = field(default_factory=list)
    cdf_orientation: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    def render(self):
        text = render_summary_table(self.mean_translation, self.std_translation,
                                    self.mean_orientation, self.std_orientation)
        lines = [text, "", "Threshold recall (failed queries count as misses)"]
        lines.append(f"{'band':>16}  {'joint':>7}  {'trans':>7}  {'orient':>7}")
        for (bt, br), j, t, r in zip(self.bands, self.recall_joint, self.recall_translation,
                                     self.recall_orientation):
            lines.append(f"{f'{bt:g} m / {br:g} deg':>16}  {j:7.1%}  {t:7.1%}  {r:7.1%}")
        counts = {}
        for q in self.queries:
            counts[q.status] = counts.get(q.status, 0) + 1
        lines.append("")
        lines.append("status: " + ", ".join(f"{k} {v}" for k, v in sorted(counts.items())))
        return "\n".join(lines)

    def write_cdf_csv(self, path, which="translation"):
        rows = self.cdf_translation if which == "translation" else self.cdf_orientation
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["error", "fraction"])
            for e, f in rows:
                w.writerow([repr(e), repr(f)])


def localization_report(queries, bands=DEFAULT_BANDS) -> LocalizationReport:
    """Aggregate ``QueryError`` records (failed ones have no errors)."""
    ok = [q for q in queries if q.status != "failed" and q.translation is not None]
    if not ok:
        raise ValidationError("no localized queries to report")
    t = np.array([q.translation for q in ok])
    r = np.array([q.orientation for q in ok])
    mt, st = error_summary(t)
    mr, sr = error_summary(r)
    localized = np.array([q.status != "failed" and q.translation is not None for q in queries])
    all_t = np.array([q.translation if ok_ else np.inf for q, ok_ in zip(queries, localized)], dtype=float)
    all_r = np.array([q.orientation if ok_ else np.inf for q, ok_ in zip(queries, localized)], dtype=float)
    rec = threshold_recall(all_t, all_r, bands, localized)
    return LocalizationReport(list(queries), mt, st, mr, sr, [list(b) for b in bands],
                              rec["joint"], rec["translation"], rec["orientation"], cdf(t), cdf(r))


# ---------------------------------------------------------------- detection

def iou(a, b):
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def _iou_matrix(gt_boxes, pred_boxes):
    g = np.asarray(gt_boxes, dtype=float).reshape(-1, 4)
    p = np.asarray(pred_boxes, dtype=float).reshape(-1, 4)
    ix = np.minimum(g[:, None, 2], p[None, :, 2]) - np.maximum(g[:, None, 0], p[None, :, 0])
    iy = np.minimum(g[:, None, 3], p[None, :, 3]) - np.maximum(g[:, None, 1], p[None, :, 1])
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    area_g = (g[:, 2] - g[:, 0]) * (g[:, 3] - g[:, 1])
    area_p = (p[:, 2] - p[:, 0]) * (p[:, 3] - p[:, 1])
    union = area_g[:, None] + area_p[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def _class_items(gt, preds, label):
    """Per-image gt boxes and the class's predictions in global rank order.

    Returns (gt_by_image, ranked) with ranked = [(image, conf, box)] sorted by
    descending confidence, ties by input order.
    """
    gt_by_image = {img: [d.box for d in dets if d.label == label] for img, dets in gt.items()}
    flat = []
    for img, dets in preds.items():
        for d in dets:
            if d.label == label:
                flat.append((img, d.confidence, d.box))
    order = sorted(range(len(flat)), key=lambda i: -flat[i][1])
    return gt_by_image, [flat[i] for i in order]


def _tp_flags(gt_by_image, ranked, iou_thresh):
    """Greedy matching in rank order; each prediction takes its best free gt."""
    used = {img: np.zeros(len(boxes), dtype=bool) for img, boxes in gt_by_image.items()}
    tp = np.zeros(len(ranked), dtype=bool)
    for i, (img, _, box) in enumerate(ranked):
        boxes = gt_by_image.get(img, [])
        if not boxes:
            continue
        ov = _iou_matrix(boxes, [box])[:, 0]
        ov[used[img]] = -1.0
        j = int(np.argmax(ov))
        if ov[j] >= iou_thresh:
            used[img][j] = True
            tp[i] = True
    return tp


def interpolated_ap(tp, n_gt):
    """101-point interpolated AP from rank-ordered TP flags."""
    if n_gt == 0:
        return math.nan
    tp = np.asarray(tp, dtype=bool)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    vals = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(vals.mean())


def average_precision(gt, preds, label, iou_thresh=0.5):
    """AP of one class; NaN when the class has no ground truth."""
    gt_by_image, ranked = _class_items(gt, preds, label)
    n_gt = sum(len(b) for b in gt_by_image.values())
    return interpolated_ap(_tp_flags(gt_by_image, ranked, iou_thresh), n_gt)


def gt_classes(gt):
    return sorted({d.label for dets in gt.values() for d in dets})


THRESHOLD_GRID = np.arange(1001) / 1000.0


def _f1_counts(gt, preds, thresholds, iou_thresh):
    counts = {}
    for c in gt_classes(gt):
        gt_by_image, ranked = _class_items(gt, preds, c)
        n_gt = sum(len(b) for b in gt_by_image.values())
        tp = _tp_flags(gt_by_image, ranked, iou_thresh)
        conf = np.array([r[1] for r in ranked], dtype=float)
        # greedy matching runs in rank order, so dropping the low-confidence
        # tail leaves the TP flags of the survivors unchanged
        keep = conf[None, :] >= thresholds[:, None]
        counts[c] = ((keep & tp[None, :]).sum(axis=1), keep.sum(axis=1), n_gt)
    return counts


def f1_confidence(gt, preds, thresholds=THRESHOLD_GRID, iou_thresh=0.5):
    """Per-class F1 over confidence thresholds and the class-mean optimum.

    Returns ``(thresholds, {class: f1 array}, mean_f1 array, best_threshold, best_f1)``;
    ties in the mean take the lowest threshold.
    """
    thresholds = np.asarray(thresholds, dtype=float)
    counts = _f1_counts(gt, preds, thresholds, iou_thresh)
    curves = {}
    for c, (n_tp, n_pred, n_gt) in counts.items():
        denom = n_pred + n_gt
        curves[c] = np.where(denom > 0, 2.0 * n_tp / np.maximum(denom, 1), 0.0)
    mean = np.mean(list(curves.values()), axis=0) if curves else np.zeros(len(thresholds))
    best = int(np.argmax(mean))
    return thresholds, curves, mean, float(thresholds[best]), float(mean[best])


@dataclass
class ConfusionMatrix:
    classes: list  # background is appended as the last index
    matrix: np.ndarray  # rows = predicted, columns = true

    def index(self, label):
        return len(self.classes) if label == BACKGROUND else self.classes.index(label)

    def count(self, true_label, pred_label):
        return self.matrix[self.index(pred_label), self.index(true_label)]

    def normalized(self):
        sums = self.matrix.sum(axis=0, keepdims=True)
        return ConfusionMatrix(list(self.classes),
                               np.divide(self.matrix, sums, out=np.zeros_like(self.matrix, dtype=float),
                                         where=sums > 0))


def confusion_matrix(gt, preds, iou_thresh=0.45, conf_thresh=0.25, normalize=False, classes=None):
    """Class-agnostic greedy IoU matching, then tally (true, predicted) pairs.

    Pairs are taken in order of decreasing IoU, ties by gt index then
    prediction index. Unmatched gt land in the background row, unmatched
    predictions in the background column.
    """
    if classes is None:
        labels = {d.label for dets in gt.values() for d in dets}
        labels |= {d.label for dets in preds.values() for d in dets if d.confidence >= conf_thresh}
        classes = sorted(labels)
    classes = list(classes)
    nc = len(classes)
    idx = {c: i for i, c in enumerate(classes)}
    m = np.zeros((nc + 1, nc + 1))
    for img in list(gt) + [i for i in preds if i not in gt]:
        g = gt.get(img, [])
        p = [d for d in preds.get(img, []) if d.confidence >= conf_thresh]
        matched_g = np.zeros(len(g), dtype=bool)
        matched_p = np.zeros(len(p), dtype=bool)
        if g and p:
            ov = _iou_matrix([d.box for d in g], [d.box for d in p])
            gi, pj = np.nonzero(ov >= iou_thresh)
            order = np.lexsort((pj, gi, -ov[gi, pj]))
            for a, b in zip(gi[order], pj[order]):
                if matched_g[a] or matched_p[b]:
                    continue
                matched_g[a] = matched_p[b] = True
                m[idx[p[b].label], idx[g[a].label]] += 1
        for a in np.flatnonzero(~matched_g):
            m[nc, idx[g[a].label]] += 1
        for b in np.flatnonzero(~matched_p):
            m[idx[p[b].label], nc] += 1
    cm = ConfusionMatrix(classes, m)
    return cm.normalized() if normalize else cm


@dataclass
class DetectionReport:
    classes: list
    ap50: dict
    ap50_95: dict
    map50: float
    map50_95: float
    best_threshold: float
    best_f1: float
    precision: float
    recall: float
    thresholds: np.ndarray
    f1_curves: dict
    mean_f1: np.ndarray
    confusion: ConfusionMatrix

    def to_dict(self):
        return {
            "classes": self.classes,
            "ap50": self.ap50, "ap50_95": self.ap50_95,
            "map50": self.map50, "map50_95": self.map50_95,
            "best_threshold": self.best_threshold, "best_f1": self.best_f1,
            "precision": self.precision, "recall": self.recall,
            "confusion_classes": self.confusion.classes + [BACKGROUND],
            "confusion_normalized": self.confusion.matrix.tolist(),
        }

    def render(self):
        w = max([len("class"), *(len(c) for c in self.classes)])
        lines = [f"{'class':<{w}}  {'AP50':>6}  {'AP50-95':>7}  {'bestF1':>6}"]
        best = int(np.argmax(self.mean_f1))
        for c in self.classes:
            lines.append(f"{c:<{w}}  {self.ap50[c]:6.3f}  {self.ap50_95[c]:7.3f}  {self.f1_curves[c][best]:6.3f}")
        lines.append(f"{'all':<{w}}  {self.map50:6.3f}  {self.map50_95:7.3f}  {self.best_f1:6.3f}")
        lines.append(f"best mean F1 {self.best_f1:.3f} at confidence {self.best_threshold:.3f}; "
                     f"precision {self.precision:.3f}, recall {self.recall:.3f}")
        return "\n".join(lines)


def map_suite(gt, preds, iou_conf=0.45, conf_conf=0.25) -> DetectionReport:
    classes = gt_classes(gt)
    ap50, ap = {}, {}
    for c in classes:
        gt_by_image, ranked = _class_items(gt, preds, c)
        n_gt = sum(len(b) for b in gt_by_image.values())
        per = [interpolated_ap(_tp_flags(gt_by_image, ranked, t), n_gt) for t in COCO_IOUS]
        ap50[c] = per[0]
        ap[c] = float(np.mean(per))
    thr, curves, mean, best_t, best_f1 = f1_confidence(gt, preds)
    counts = _f1_counts(gt, preds, thr, 0.5)
    bi = int(np.argmax(mean))
    prec, rec = [], []
    for c in classes:
        n_tp, n_pred, n_gt = counts[c]
        prec.append(n_tp[bi] / n_pred[bi] if n_pred[bi] else 0.0)
        rec.append(n_tp[bi] / n_gt if n_gt else 0.0)
    cm = confusion_matrix(gt, preds, iou_conf, conf_conf, normalize=True)
    return DetectionReport(
        classes, ap50, ap,
        float(np.mean(list(ap50.values()))) if classes else 0.0,
        float(np.mean(list(ap.values()))) if classes else 0.0,
        best_t, best_f1,
        float(np.mean(prec)) if prec else 0.0, float(np.mean(rec)) if rec else 0.0,
        thr, curves, mean, cm,
    )
