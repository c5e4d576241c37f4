"""End-to-end panoptic pipeline: boundary prediction, pruning, connected
components and per-instance classification, plus training orchestration."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .calibrate import CalibratedBinaryClassifier, apply_isotonic, fit_calibrated
from .errors import ContractError, SchemaError
from .features import (
    EDGE_SCHEMA_VERSION,
    INSTANCE_SCHEMA_VERSION,
    enrich_edges,
    instance_features,
)
from .gbdt import GbdtMulticlassModel, TrainConfig, _softmax, fit_multiclass
from .graph import PartGraph, binary_edge_labels, ground_truth_instances, validate_instances
from .metrics import calibration_report


@dataclass(eq=False)
class PanopticPrediction:
    part_id: str
    instances: list  # (frozenset of face ids, class id, confidence)
    edge_probs: np.ndarray


@dataclass(eq=False)
class PipelineModel:
    boundary: CalibratedBinaryClassifier
    semantic: GbdtMulticlassModel
    threshold: float
    classes: tuple[str, ...]
    edge_schema: str = EDGE_SCHEMA_VERSION
    instance_schema: str = INSTANCE_SCHEMA_VERSION

    def __post_init__(self):
        _check_threshold(self.threshold)

    def check_schemas(self):
        if self.edge_schema != EDGE_SCHEMA_VERSION:
            raise SchemaError(
                f"model edge schema {self.edge_schema!r} != current {EDGE_SCHEMA_VERSION!r}"
            )
        if self.instance_schema != INSTANCE_SCHEMA_VERSION:
            raise SchemaError(
                f"model instance schema {self.instance_schema!r} != "
                f"current {INSTANCE_SCHEMA_VERSION!r}"
            )


def _check_threshold(tau: float):
    if not 0.0 < tau < 1.0:
        raise ContractError(f"threshold must lie strictly inside (0, 1), got {tau}")


def build_edge_training_set(parts):
    """Stack enriched edge rows, binary labels and part-level group ids."""
    rows = []
    labels = []
    groups = []
    for g in parts:
        feats = enrich_edges(g)
        y = binary_edge_labels(g)
        rows.append(feats)
        labels.append(y)
        groups.extend([g.part_id] * g.m)
    if not rows:
        raise ContractError("no parts to train on")
    return np.vstack(rows), np.concatenate(labels).astype(np.float64), groups


def train_instance_stage(parts, cfg: TrainConfig) -> CalibratedBinaryClassifier:
    X, y, groups = build_edge_training_set(parts)
    return fit_calibrated(X, y, groups, cfg)


def build_instance_training_set(parts):
    """One row per ground-truth instance (disconnected instances split per
    component); returns (X, y, n_split_instances)."""
    rows = []
    labels = []
    n_split = 0
    for g in parts:
        n_split += len(validate_instances(g).disconnected_instances)
        for faces, cls in ground_truth_instances(g, split=True):
            rows.append(instance_features(g, faces))
            labels.append(cls)
    if not rows:
        raise ContractError("no parts to train on")
    return np.vstack(rows), np.asarray(labels, dtype=np.int64), n_split


def train_semantic_stage(parts, n_classes: int, cfg: TrainConfig) -> GbdtMulticlassModel:
    X, y, _ = build_instance_training_set(parts)
    return fit_multiclass(X, y, n_classes, cfg)


def predict_boundaries(model: CalibratedBinaryClassifier, g: PartGraph, tau: float):
    """Per-edge keep decision: 1 (same instance) iff calibrated prob >= tau."""
    _check_threshold(tau)
    probs = (
        np.asarray(model.predict_proba(enrich_edges(g)))
        if g.m
        else np.zeros(0)
    )
    y_hat = (probs >= tau).astype(np.uint8)
    return y_hat, probs


def components(g: PartGraph, keep) -> list[frozenset]:
    """Connected components of the graph keeping only edges with keep == 1,
    via union-find; ordered by smallest contained face index."""
    keep = np.asarray(keep)
    if len(keep) != g.m:
        raise ContractError(f"keep mask length {len(keep)} != edge count {g.m}")
    parent = list(range(g.n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for k, e in enumerate(g.edges):
        if keep[k]:
            ra, rb = find(e.face_s), find(e.face_t)
            if ra != rb:
                parent[rb] = ra
    groups = {}
    for v in range(g.n):
        groups.setdefault(find(v), []).append(v)
    out = [frozenset(v) for v in groups.values()]
    out.sort(key=min)
    return out


def classify_instances(model: PipelineModel, g: PartGraph, comps):
    """Semantic class and softmax confidence for each component."""
    if not comps:
        return []
    z = np.vstack([instance_features(g, c) for c in comps])
    cls, logits = model.semantic.predict_class(z)
    probs = _softmax(logits)
    return [
        (comps[i], int(cls[i]), float(probs[i, cls[i]]))
        for i in range(len(comps))
    ]


def infer(model: PipelineModel, g: PartGraph, tau: float | None = None) -> PanopticPrediction:
    """Full panoptic inference; output instances partition the faces."""
    model.check_schemas()
    tau = model.threshold if tau is None else tau
    y_hat, probs = predict_boundaries(model.boundary, g, tau)
    comps = components(g, y_hat)
    instances = classify_instances(model, g, comps)
    return PanopticPrediction(part_id=g.part_id, instances=instances, edge_probs=probs)


def logit_sum_vote(per_face_logits: np.ndarray, faces) -> int:
    """Instance class from external per-face logits: argmax of the column
    sum over the instance's faces, ties to the lowest class index. Used for
    converting per-face baseline predictions, not by the native pipeline."""
    faces = sorted(faces)
    if not faces:
        raise ContractError("cannot vote over an empty face set")
    sums = np.asarray(per_face_logits)[faces].sum(axis=0)
    return int(np.argmax(sums))


@dataclass
class TrainReport:
    n_parts: int = 0
    n_edges: int = 0
    n_instances: int = 0
    n_split_instances: int = 0
    boundary_fraction: float = 0.0
    oof_ece: float = 0.0
    instance_stage_seconds: float = 0.0
    semantic_stage_seconds: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def train_pipeline(parts, classes, cfg_binary: TrainConfig, cfg_multi: TrainConfig,
                   threshold: float = 0.5, train_on_predicted: bool = False):
    """Train both stages; returns (PipelineModel, TrainReport).

    The semantic stage trains on ground-truth instances by default;
    ``train_on_predicted`` substitutes the boundary stage's own predicted
    components (ablation only).
    """
    _check_threshold(threshold)
    parts = list(parts)
    report = TrainReport(n_parts=len(parts))

    t0 = time.perf_counter()
    X, y, groups = build_edge_training_set(parts)
    boundary = fit_calibrated(X, y, groups, cfg_binary)
    report.instance_stage_seconds = time.perf_counter() - t0
    report.n_edges = len(y)
    report.boundary_fraction = float(1.0 - y.mean())
    oof_probs = apply_isotonic(boundary.calibrator, boundary.oof_probs_raw)
    report.oof_ece = calibration_report(oof_probs, y)[0]

    t0 = time.perf_counter()
    n_classes = len(classes)
    if train_on_predicted:
        rows, labels = [], []
        for g in parts:
            y_hat, _ = predict_boundaries(boundary, g, threshold)
            face_cls = [f.semantic_class for f in g.faces]
            for comp in components(g, y_hat):
                rows.append(instance_features(g, comp))
                votes = np.bincount([face_cls[v] for v in comp], minlength=n_classes)
                labels.append(int(np.argmax(votes)))
        Xi, yi = np.vstack(rows), np.asarray(labels, dtype=np.int64)
        n_split = 0
    else:
        Xi, yi, n_split = build_instance_training_set(parts)
    semantic = fit_multiclass(Xi, yi, n_classes, cfg_multi)
    report.semantic_stage_seconds = time.perf_counter() - t0
    report.n_instances = len(yi)
    report.n_split_instances = n_split

    model = PipelineModel(boundary=boundary, semantic=semantic,
                          threshold=threshold, classes=tuple(classes))
    return model, report
