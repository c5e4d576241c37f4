"""Second-order gradient-boosted decision trees (binary and multiclass).

Exact greedy split search on pre-sorted columns, no histogram binning.
Feature columns are argsorted once per fit; node segments are partitioned in
place as trees grow, so each boosting round costs O(levels * n * features).
Feature scan and reduction order are fixed, making fits bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DegenerateLabelsError, FitError, SchemaError

MARGIN_CLAMP = 30.0


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    lambda_l2: float = 1.0
    min_child_hessian: float = 1.0
    n_folds: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.n_trees <= 0 or self.max_depth <= 0 or self.learning_rate <= 0:
            raise FitError("n_trees, max_depth and learning_rate must be positive")
        if self.lambda_l2 < 0 or self.min_child_hessian < 0 or self.n_folds <= 0:
            raise FitError("lambda_l2, min_child_hessian and n_folds must be non-negative")


@dataclass(eq=False)
class DecisionTree:
    """Flat node arrays; feature == -1 marks a leaf. Rule: go left iff
    x[feature] < threshold, NaN goes left. Leaf weights are unscaled
    (-G/(H+lambda)); the ensemble applies the learning rate."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


@njit(cache=True)
def _scan_level(sv, ords, gh, lo, hi, gtot, htot, lam, min_h,
                bfeat, bthr, bnl, bgl, bhl, bnum, bden):
    """Best split per active node across all features.

    Split quality gl^2/(hl+lam) + gr^2/(hr+lam) is compared by cross
    multiplication, so the hot loop is division free; initializing the
    running best with the parent score G^2/(H+lam) makes "beats the best"
    equivalent to "has strictly positive gain". Ties keep the earlier
    feature. Outputs: best feature (-1 = no valid split), threshold, left
    row count and left grad/hess sums at the chosen split.
    """
    nf = sv.shape[0]
    na = lo.shape[0]
    for a in range(na):
        bfeat[a] = -1
        bnum[a] = gtot[a] * gtot[a]
        bden[a] = htot[a] + lam
    for f in range(nf):
        for a in range(na):
            if sv[f, lo[a]] == sv[f, hi[a] - 1]:
                continue  # constant within the segment: no candidate split
            g = gtot[a]
            h = htot[a]
            gl = 0.0
            hl = 0.0
            for p in range(lo[a], hi[a] - 1):
                r = ords[f, p]
                gl += gh[r, 0]
                hl += gh[r, 1]
                v = sv[f, p]
                if v == sv[f, p + 1]:
                    continue
                hr = h - hl
                if hr < min_h:
                    break
                if hl < min_h:
                    continue
                gr = g - gl
                hll = hl + lam
                hrl = hr + lam
                num = gl * gl * hrl + gr * gr * hll
                den = hll * hrl
                if num * bden[a] > bnum[a] * den:
                    bnum[a] = num
                    bden[a] = den
                    bfeat[a] = f
                    bthr[a] = 0.5 * (v + sv[f, p + 1])
                    bnl[a] = p + 1 - lo[a]
                    bgl[a] = gl
                    bhl[a] = hl


@njit(cache=True)
def _partition_level(sv, ords, side, lo, hi, bfeat, bnl, tv, to):
    """Stable in-place partition of each node segment by the side mask.

    The winning feature's own column is already partitioned by sort order,
    so it only seeds the mask; left rows of the other columns are compacted
    forward in place and right rows staged through the temp buffers.
    """
    nf = sv.shape[0]
    na = lo.shape[0]
    for a in range(na):
        bf = bfeat[a]
        if bf < 0:
            continue
        cut = lo[a] + bnl[a]
        for p in range(lo[a], cut):
            side[ords[bf, p]] = 1
        for p in range(cut, hi[a]):
            side[ords[bf, p]] = 0
    for f in range(nf):
        for a in range(na):
            if bfeat[a] < 0 or bfeat[a] == f:
                continue
            if f != 0 and sv[f, lo[a]] == sv[f, hi[a] - 1]:
                # Constant column: descendants can never split on it, and its
                # scans are skipped, so leaving rows unmoved is safe. Feature
                # 0 is exempt because its row order defines leaf segments.
                continue
            k = lo[a]
            k2 = 0
            for p in range(lo[a], hi[a]):
                r = ords[f, p]
                if side[r]:
                    sv[f, k] = sv[f, p]
                    ords[f, k] = r
                    k += 1
                else:
                    tv[k2] = sv[f, p]
                    to[k2] = r
                    k2 += 1
            for i in range(k2):
                sv[f, k + i] = tv[i]
                ords[f, k + i] = to[i]


@njit(cache=True)
def _predict_forest(x, feat, thr, left, right, weight, starts, scale, out):
    n = x.shape[0]
    nt = starts.shape[0] - 1
    for i in range(n):
        s = 0.0
        for t in range(nt):
            node = starts[t]
            while feat[node] >= 0:
                v = x[i, feat[node]]
                if np.isnan(v) or v < thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            s += weight[node]
        out[i] += scale * s


class _FitWorkspace:
    """Per-fit buffers: pristine sorted columns plus mutable copies that are
    re-partitioned while each tree grows."""

    def __init__(self, X: np.ndarray):
        if X.ndim != 2 or X.shape[0] == 0:
            raise FitError("training matrix must be 2-D and non-empty")
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        n, nf = self.X.shape
        key = np.where(np.isnan(self.X), -np.inf, self.X)
        order = np.argsort(key, axis=0, kind="stable").astype(np.int32)
        self.ords0 = np.ascontiguousarray(order.T)
        self.sv0 = np.ascontiguousarray(np.take_along_axis(key, order, axis=0).T)
        self.ords = np.empty_like(self.ords0)
        self.sv = np.empty_like(self.sv0)
        self.gh = np.empty((n, 2))
        self.side = np.zeros(n, dtype=np.uint8)
        self.tv = np.empty(n)
        self.to = np.empty(n, dtype=np.int32)


def fit_tree(X, grad, hess, cfg: TrainConfig) -> DecisionTree:
    """Fit one regression tree to (grad, hess). Standalone entry point; the
    boosting loops reuse a shared workspace instead."""
    ws = _FitWorkspace(np.asarray(X, dtype=np.float64))
    tree, _ = _fit_tree_ws(ws, np.asarray(grad, float), np.asarray(hess, float), cfg)
    return tree


def _fit_tree_ws(ws: _FitWorkspace, grad, hess, cfg: TrainConfig):
    """Grow one tree; returns (tree, leaf_segments) where leaf_segments is a
    list of (lo, hi, weight) row segments in ws.ords[0] order."""
    n, nf = ws.X.shape
    if len(grad) != n or len(hess) != n:
        raise FitError("grad/hess length must match the row count")
    np.copyto(ws.ords, ws.ords0)
    np.copyto(ws.sv, ws.sv0)
    ws.gh[:, 0] = grad
    ws.gh[:, 1] = hess

    feature = [0]
    threshold = [np.nan]
    left = [-1]
    right = [-1]
    weight = [0.0]
    feature[0] = -1
    lam = cfg.lambda_l2
    leaf_segments = []

    active = [(0, 0, n, float(grad.sum()), float(hess.sum()))]
    for depth in range(cfg.max_depth + 1):
        if not active:
            break
        na = len(active)
        lo = np.array([a[1] for a in active], dtype=np.int64)
        hi = np.array([a[2] for a in active], dtype=np.int64)
        gtot = np.array([a[3] for a in active])
        htot = np.array([a[4] for a in active])
        if depth == cfg.max_depth:
            for a in range(na):
                node = active[a][0]
                feature[node] = -1
                weight[node] = -gtot[a] / (htot[a] + lam)
                leaf_segments.append((int(lo[a]), int(hi[a]), weight[node]))
            break
        bfeat = np.empty(na, dtype=np.int32)
        bthr = np.empty(na)
        bnl = np.empty(na, dtype=np.int64)
        bgl = np.empty(na)
        bhl = np.empty(na)
        bnum = np.empty(na)
        bden = np.empty(na)
        _scan_level(ws.sv, ws.ords, ws.gh, lo, hi, gtot, htot, lam,
                    cfg.min_child_hessian, bfeat, bthr, bnl, bgl, bhl, bnum, bden)
        split_info = []
        for a in range(na):
            node = active[a][0]
            if bfeat[a] >= 0:
                split_info.append((a, node))
                continue
            feature[node] = -1
            weight[node] = -gtot[a] / (htot[a] + lam)
            leaf_segments.append((int(lo[a]), int(hi[a]), weight[node]))
        if not split_info:
            break
        _partition_level(ws.sv, ws.ords, ws.side, lo, hi, bfeat, bnl, ws.tv, ws.to)
        nxt = []
        for a, node in split_info:
            lid = len(feature)
            rid = lid + 1
            for _ in range(2):
                feature.append(-1)
                threshold.append(np.nan)
                left.append(-1)
                right.append(-1)
                weight.append(0.0)
            feature[node] = int(bfeat[a])
            threshold[node] = float(bthr[a])
            left[node] = lid
            right[node] = rid
            nl, gl, hl = int(bnl[a]), float(bgl[a]), float(bhl[a])
            nxt.append((lid, int(lo[a]), int(lo[a]) + nl, gl, hl))
            nxt.append((rid, int(lo[a]) + nl, int(hi[a]), gtot[a] - gl, htot[a] - hl))
        active = nxt

    tree = DecisionTree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        weight=np.array(weight),
    )
    return tree, leaf_segments


def _apply_leaves(ws, leaf_segments, margins, lr):
    for lo, hi, w in leaf_segments:
        margins[ws.ords[0, lo:hi]] += lr * w


def _sigmoid(margin):
    return 1.0 / (1.0 + np.exp(-np.clip(margin, -MARGIN_CLAMP, MARGIN_CLAMP)))


def _softmax(margins):
    z = np.clip(margins, -MARGIN_CLAMP, MARGIN_CLAMP)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class _Flat:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray
    starts: np.ndarray


def _flatten(trees) -> _Flat:
    counts = [t.n_nodes for t in trees]
    starts = np.zeros(len(trees) + 1, dtype=np.int64)
    starts[1:] = np.cumsum(counts)
    feature = np.concatenate([t.feature for t in trees]) if trees else np.empty(0, np.int32)
    offs = np.repeat(starts[:-1], counts) if trees else np.empty(0, np.int64)
    left = np.concatenate([t.left for t in trees]) if trees else np.empty(0, np.int32)
    right = np.concatenate([t.right for t in trees]) if trees else np.empty(0, np.int32)
    mask = feature >= 0
    left = left + offs * mask
    right = right + offs * mask
    return _Flat(
        feature=feature.astype(np.int32),
        threshold=np.concatenate([t.threshold for t in trees]) if trees else np.empty(0),
        left=left.astype(np.int32),
        right=right.astype(np.int32),
        weight=np.concatenate([t.weight for t in trees]) if trees else np.empty(0),
        starts=starts,
    )


def _forest_margin(trees, X, scale, out):
    if not trees:
        return out
    flat = _flatten(trees)
    _predict_forest(X, flat.feature, flat.threshold, flat.left, flat.right,
                    flat.weight, flat.starts, scale, out)
    return out


@dataclass(eq=False)
class GbdtBinaryModel:
    trees: list
    base_score: float
    config: TrainConfig
    n_features: int

    def _check(self, X):
        if X.shape[1] != self.n_features:
            raise SchemaError(f"expected {self.n_features} features, got {X.shape[1]}")

    def predict_margin(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        self._check(X)
        out = np.full(X.shape[0], self.base_score)
        return _forest_margin(self.trees, X, self.config.learning_rate, out)

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.predict_margin(X))


@dataclass(eq=False)
class GbdtMulticlassModel:
    trees: list  # trees[k] is the per-round tree list of class k
    base_scores: np.ndarray
    config: TrainConfig
    n_features: int
    n_classes: int

    def _check(self, X):
        if X.shape[1] != self.n_features:
            raise SchemaError(f"expected {self.n_features} features, got {X.shape[1]}")

    def predict_logits(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        self._check(X)
        out = np.tile(self.base_scores, (X.shape[0], 1))
        for k in range(self.n_classes):
            _forest_margin(self.trees[k], X, self.config.learning_rate, out[:, k])
        return out

    def predict_class(self, X):
        logits = self.predict_logits(X)
        return logits.argmax(axis=1), logits

    def predict_proba(self, X) -> np.ndarray:
        return _softmax(self.predict_logits(X))


def _logloss(p, y):
    p = np.clip(p, 1e-15, 1.0 - 1e-15)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


def fit_binary(X, y, cfg: TrainConfig) -> GbdtBinaryModel:
    """Boosted logistic regression trees; training loss is checked to be
    non-increasing every round."""
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise FitError("empty training input")
    if len(y) != X.shape[0]:
        raise FitError("label length must match the row count")
    pi = float(y.mean())
    if pi == 0.0 or pi == 1.0:
        raise DegenerateLabelsError("binary training labels contain a single class")
    base = float(np.log(pi / (1.0 - pi)))
    margins = np.full(X.shape[0], base)
    ws = _FitWorkspace(X)
    trees = []
    prev = _logloss(_sigmoid(margins), y)
    for _ in range(cfg.n_trees):
        p = _sigmoid(margins)
        grad = p - y
        hess = p * (1.0 - p)
        tree, leaves = _fit_tree_ws(ws, grad, hess, cfg)
        trees.append(tree)
        _apply_leaves(ws, leaves, margins, cfg.learning_rate)
        loss = _logloss(_sigmoid(margins), y)
        if loss > prev + 1e-12:
            raise FitError(f"training loss increased: {prev} -> {loss}")
        prev = loss
    return GbdtBinaryModel(trees=trees, base_score=base, config=cfg, n_features=X.shape[1])


def fit_multiclass(X, y, n_classes: int, cfg: TrainConfig) -> GbdtMulticlassModel:
    """Softmax boosting: each round fits one tree per class on that class's
    gradient. Ties in the final argmax resolve to the lowest class index."""
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise FitError("empty training input")
    if len(y) != X.shape[0]:
        raise FitError("label length must match the row count")
    if y.min() < 0 or y.max() >= n_classes:
        raise FitError(f"labels outside [0, {n_classes})")
    n = X.shape[0]
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    base = np.log((counts + 1.0) / (n + n_classes))
    margins = np.tile(base, (n, 1))
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    ws = _FitWorkspace(X)
    trees = [[] for _ in range(n_classes)]
    prev = float("inf")
    for _ in range(cfg.n_trees):
        p = _softmax(margins)
        for k in range(n_classes):
            grad = p[:, k] - onehot[:, k]
            hess = p[:, k] * (1.0 - p[:, k])
            tree, leaves = _fit_tree_ws(ws, grad, hess, cfg)
            trees[k].append(tree)
            _apply_leaves(ws, leaves, margins[:, k], cfg.learning_rate)
        p = _softmax(margins)
        loss = float(-np.log(np.clip(p[np.arange(n), y], 1e-15, None)).mean())
        if loss > prev + 1e-12:
            raise FitError(f"training loss increased: {prev} -> {loss}")
        prev = loss
    return GbdtMulticlassModel(trees=trees, base_scores=base, config=cfg,
                               n_features=X.shape[1], n_classes=n_classes)
