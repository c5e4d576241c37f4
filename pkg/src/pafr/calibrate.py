"""Isotonic probability calibration fit on grouped out-of-fold scores.

Folds are assigned at group (part) level so edges of one part never leak
between a fold model and its calibration rows. Assignment depends only on
the group id and the seed, never on row order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import FitError
from .gbdt import GbdtBinaryModel, TrainConfig, fit_binary


@dataclass(eq=False)
class IsotonicModel:
    """Piecewise-linear non-decreasing map from scores to probabilities."""

    breakpoints: np.ndarray  # strictly increasing scores
    values: np.ndarray  # non-decreasing, in [0, 1]

    def apply(self, s):
        return apply_isotonic(self, s)


def fit_isotonic(scores, labels) -> IsotonicModel:
    """Least-squares non-decreasing fit by pool-adjacent-violators.

    Ties in score are pre-merged by averaging their labels with summed
    weights, so breakpoints are strictly increasing.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.size == 0 or scores.shape != labels.shape:
        raise FitError("isotonic fit needs matching non-empty scores and labels")
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    y = labels[order]
    bp, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    mean = np.zeros(len(bp))
    np.add.at(mean, inverse, y)
    mean /= counts

    # pool adjacent violators; each block tracks (mean, weight, #breakpoints)
    vals: list[float] = []
    wts: list[float] = []
    spans: list[int] = []
    for v, w in zip(mean, counts.astype(np.float64)):
        vals.append(float(v))
        wts.append(float(w))
        spans.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            merged = (vals[-2] * wts[-2] + vals[-1] * wts[-1]) / (wts[-2] + wts[-1])
            wts[-2] += wts[-1]
            spans[-2] += spans[-1]
            vals[-2] = merged
            vals.pop()
            wts.pop()
            spans.pop()
    fitted = np.clip(np.repeat(np.array(vals), np.array(spans)), 0.0, 1.0)
    return IsotonicModel(breakpoints=bp, values=fitted)


def apply_isotonic(model: IsotonicModel, s):
    """Linear interpolation between breakpoints, clamped at the ends."""
    s = np.asarray(s, dtype=np.float64)
    out = np.interp(s, model.breakpoints, model.values)
    return float(out) if out.ndim == 0 else out


@dataclass(eq=False)
class CalibratedBinaryClassifier:
    base: GbdtBinaryModel  # refit on all rows
    calibrator: IsotonicModel  # fit on pooled out-of-fold probabilities
    config: TrainConfig
    oof_probs_raw: np.ndarray | None = None  # training diagnostic, not serialized

    def predict_proba(self, X) -> np.ndarray:
        raw = self.base.predict_proba(X)
        return np.asarray(apply_isotonic(self.calibrator, raw))

    def predict_proba_raw(self, X) -> np.ndarray:
        return self.base.predict_proba(X)


def group_folds(group_ids, n_folds: int, seed: int) -> dict:
    """Deterministic group -> fold map: groups are ordered by a seed-keyed
    hash (ties by group id) and dealt round-robin, so folds are balanced in
    group count and independent of row order."""
    groups = sorted(set(group_ids))
    if len(groups) < n_folds:
        raise FitError(f"need at least {n_folds} distinct groups, got {len(groups)}")

    def h(gid):
        digest = hashlib.blake2b(f"{seed}:{gid}".encode(), digest_size=8).digest()
        return int.from_bytes(digest, "little")

    ordered = sorted(groups, key=lambda gid: (h(gid), str(gid)))
    return {gid: i % n_folds for i, gid in enumerate(ordered)}


def fit_calibrated(X, y, group_ids, cfg: TrainConfig) -> CalibratedBinaryClassifier:
    """Grouped-CV isotonic calibration on top of a boosted binary model.

    Per fold: fit on the other folds, collect out-of-fold probabilities;
    the isotonic map is fit on the pooled (probability, label) pairs and the
    base model is refit on all rows.
    """
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    group_ids = list(group_ids)
    if len(group_ids) != X.shape[0]:
        raise FitError("group id list must match the row count")
    fold_of_group = group_folds(group_ids, cfg.n_folds, cfg.seed)
    fold = np.array([fold_of_group[g] for g in group_ids])
    # Canonicalize row order so the fit (whose floating-point accumulation
    # follows row order) is invariant to how callers ordered their rows.
    canon = np.lexsort((fold, y) + tuple(X.T[::-1]))
    inverse = np.argsort(canon)
    X = np.ascontiguousarray(X[canon])
    y = y[canon]
    fold = fold[canon]
    oof = np.full(X.shape[0], np.nan)
    for f in range(cfg.n_folds):
        test = fold == f
        train = ~test
        if not test.any():
            continue
        model = fit_binary(X[train], y[train], cfg)
        oof[test] = model.predict_proba(X[test])
    if np.isnan(oof).any():
        raise FitError("out-of-fold coverage incomplete")
    calibrator = fit_isotonic(oof, y)
    base = fit_binary(X, y, cfg)
    return CalibratedBinaryClassifier(base=base, calibrator=calibrator, config=cfg,
                                      oof_probs_raw=oof[inverse])
