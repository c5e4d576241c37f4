"""Evaluation suite: Panoptic Quality, recognition & localization accuracy,
per-edge binary metrics and a calibration report.

Instances are (face set, class) pairs. Because predictions and ground truth
both partition the face set, an IoU > 0.5 match is unique on each side, so
greedy matching is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class MatchResult:
    tp: list  # (pred index, gt index, iou)
    fp: list  # unmatched pred indices
    fn: list  # unmatched gt indices


@dataclass
class PqReport:
    pq: float
    sq: float
    rq: float
    n_tp: int
    n_fp: int
    n_fn: int
    iou_sum: float
    per_class: dict = field(default_factory=dict)
    excluded_classes: frozenset = frozenset()


def iou(a, b) -> float:
    a, b = frozenset(a), frozenset(b)
    if not a or not b:
        raise ContractError("IoU of an empty instance is undefined")
    return len(a & b) / len(a | b)


def _check_partition(instances, name: str):
    seen = set()
    for faces, _ in instances:
        if not faces:
            raise ContractError(f"{name} contains an empty instance")
        if seen & set(faces):
            raise ContractError(f"{name} instances overlap")
        seen |= set(faces)
    return seen


def match_instances(preds, gts, exclude=frozenset()) -> MatchResult:
    """One-to-one matching of (face set, class) instances with equal class
    and IoU > 0.5. Instances whose class is excluded are dropped whole from
    both sides before matching."""
    pred_universe = _check_partition(preds, "prediction")
    gt_universe = _check_partition(gts, "ground truth")
    if preds and gts and pred_universe != gt_universe:
        raise ContractError("predictions and ground truth cover different face sets")
    exclude = frozenset(exclude)
    pidx = [i for i, (_, c) in enumerate(preds) if c not in exclude]
    gidx = [j for j, (_, c) in enumerate(gts) if c not in exclude]
    face_to_gt = {}
    for j in gidx:
        for f in gts[j][0]:
            face_to_gt[f] = j
    tp = []
    matched_gt = set()
    matched_pred = set()
    for i in pidx:
        faces, cls = preds[i]
        candidates = {face_to_gt[f] for f in faces if f in face_to_gt}
        for j in sorted(candidates):
            if j in matched_gt or gts[j][1] != cls:
                continue
            ov = iou(faces, gts[j][0])
            if ov > 0.5:
                tp.append((i, j, ov))
                matched_gt.add(j)
                matched_pred.add(i)
                break
    fp = [i for i in pidx if i not in matched_pred]
    fn = [j for j in gidx if j not in matched_gt]
    return MatchResult(tp=tp, fp=fp, fn=fn)


def _pq_from_counts(iou_sum, n_tp, n_fp, n_fn):
    if n_tp == 0 and n_fp == 0 and n_fn == 0:
        return 1.0, 1.0, 1.0
    denom = n_tp + 0.5 * n_fp + 0.5 * n_fn
    pq = iou_sum / denom if denom > 0 else 0.0
    sq = iou_sum / n_tp if n_tp > 0 else 0.0
    rq = n_tp / denom if denom > 0 else 0.0
    return pq, sq, rq


def panoptic_quality(pairs, exclude=frozenset()) -> PqReport:
    """Dataset-level PQ over (preds, gts) pairs: TP/FP/FN counts and IoU
    sums aggregate across parts before the final division."""
    exclude = frozenset(exclude)
    iou_sum = 0.0
    n_tp = n_fp = n_fn = 0
    per_class_acc = {}
    for preds, gts in pairs:
        match = match_instances(preds, gts, exclude)
        iou_sum += sum(t[2] for t in match.tp)
        n_tp += len(match.tp)
        n_fp += len(match.fp)
        n_fn += len(match.fn)
        for _, j, ov in match.tp:
            cls = gts[j][1]
            acc = per_class_acc.setdefault(cls, [0.0, 0, 0, 0])
            acc[0] += ov
            acc[1] += 1
        for i in match.fp:
            acc = per_class_acc.setdefault(preds[i][1], [0.0, 0, 0, 0])
            acc[2] += 1
        for j in match.fn:
            acc = per_class_acc.setdefault(gts[j][1], [0.0, 0, 0, 0])
            acc[3] += 1
    pq, sq, rq = _pq_from_counts(iou_sum, n_tp, n_fp, n_fn)
    per_class = {
        cls: _pq_from_counts(*acc)[0] for cls, acc in sorted(per_class_acc.items())
    }
    return PqReport(pq=pq, sq=sq, rq=rq, n_tp=n_tp, n_fp=n_fp, n_fn=n_fn,
                    iou_sum=iou_sum, per_class=per_class, excluded_classes=exclude)


def panoptic_quality_single(preds, gts, exclude=frozenset()) -> PqReport:
    return panoptic_quality([(preds, gts)], exclude)


def recognition_localization_accuracy(pairs, exclude=frozenset()) -> float:
    """Fraction of non-excluded ground-truth instances exactly recovered:
    identical face set and correct predicted class. Empty-after-exclusion
    evaluates to 1.0 by convention."""
    exclude = frozenset(exclude)
    total = 0
    hit = 0
    for preds, gts in pairs:
        lookup = {frozenset(f): c for f, c in preds}
        for faces, cls in gts:
            if cls in exclude:
                continue
            total += 1
            if lookup.get(frozenset(faces)) == cls:
                hit += 1
    return hit / total if total else 1.0


def edge_binary_metrics(y_pred, y_true):
    """(accuracy, precision, recall, f1) with positive class = same-instance."""
    y_pred = np.asarray(y_pred).astype(np.int64)
    y_true = np.asarray(y_true).astype(np.int64)
    if y_pred.shape != y_true.shape or y_pred.size == 0:
        raise ContractError("edge metric inputs must be equal-length and non-empty")
    tp = int(((y_pred == 1) & (y_true == 1)).sum())
    fp = int(((y_pred == 1) & (y_true == 0)).sum())
    fn = int(((y_pred == 0) & (y_true == 1)).sum())
    acc = float((y_pred == y_true).mean())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0
    return acc, precision, recall, f1


def calibration_report(probs, labels, n_bins: int = 10):
    """Expected calibration error over equal-width probability bins.

    Returns (ece, table) where each table row is
    (bin_lo, bin_hi, count, mean_prob, mean_label).
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.size == 0 or probs.shape != labels.shape:
        raise ContractError("calibration report needs matching non-empty inputs")
    bins = np.minimum((probs * n_bins).astype(np.int64), n_bins - 1)
    table = []
    ece = 0.0
    n = probs.size
    for b in range(n_bins):
        mask = bins == b
        count = int(mask.sum())
        if count:
            mp = float(probs[mask].mean())
            ml = float(labels[mask].mean())
            ece += (count / n) * abs(mp - ml)
        else:
            mp = ml = float("nan")
        table.append((b / n_bins, (b + 1) / n_bins, count, mp, ml))
    return ece, table
