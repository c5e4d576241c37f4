"""Binary model files: magic "PAFRMDL1", little-endian layout.

Layout: magic, kind byte, then kind-specific blocks. Arrays are stored as a
u64 element count followed by raw little-endian values, so round-trips are
bitwise exact. Only round-trip exactness is contractual; the layout may
change with the magic version.
"""

from __future__ import annotations

import struct

import numpy as np

from .calibrate import CalibratedBinaryClassifier, IsotonicModel
from .errors import FormatError
from .gbdt import DecisionTree, GbdtBinaryModel, GbdtMulticlassModel, TrainConfig

MAGIC = b"PAFRMDL1"

KIND_BINARY = 1
KIND_MULTICLASS = 2
KIND_CALIBRATED = 3
KIND_PIPELINE = 4


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def u8(self, v):
        self.buf += struct.pack("<B", v)

    def i32(self, v):
        self.buf += struct.pack("<i", v)

    def u64(self, v):
        self.buf += struct.pack("<Q", v)

    def f64(self, v):
        self.buf += struct.pack("<d", v)

    def text(self, s: str):
        raw = s.encode("utf-8")
        self.u64(len(raw))
        self.buf += raw

    def array(self, a: np.ndarray, dtype: str):
        a = np.ascontiguousarray(a, dtype=dtype)
        self.u64(a.size)
        self.buf += a.tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, n) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("model file truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self):
        return struct.unpack("<B", self._take(1))[0]

    def i32(self):
        return struct.unpack("<i", self._take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self):
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        n = self.u64()
        return self._take(n).decode("utf-8")

    def array(self, dtype: str) -> np.ndarray:
        n = self.u64()
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self._take(n * itemsize), dtype=dtype).copy()


def _write_config(w: _Writer, cfg: TrainConfig):
    w.i32(cfg.n_trees)
    w.i32(cfg.max_depth)
    w.f64(cfg.learning_rate)
    w.f64(cfg.lambda_l2)
    w.f64(cfg.min_child_hessian)
    w.i32(cfg.n_folds)
    w.u64(cfg.seed & ((1 << 64) - 1))


def _read_config(r: _Reader) -> TrainConfig:
    return TrainConfig(
        n_trees=r.i32(),
        max_depth=r.i32(),
        learning_rate=r.f64(),
        lambda_l2=r.f64(),
        min_child_hessian=r.f64(),
        n_folds=r.i32(),
        seed=r.u64(),
    )


def _write_tree(w: _Writer, t: DecisionTree):
    w.array(t.feature, "<i4")
    w.array(t.threshold, "<f8")
    w.array(t.left, "<i4")
    w.array(t.right, "<i4")
    w.array(t.weight, "<f8")


def _read_tree(r: _Reader) -> DecisionTree:
    return DecisionTree(
        feature=r.array("<i4"),
        threshold=r.array("<f8"),
        left=r.array("<i4"),
        right=r.array("<i4"),
        weight=r.array("<f8"),
    )


def _write_binary(w: _Writer, m: GbdtBinaryModel):
    _write_config(w, m.config)
    w.f64(m.base_score)
    w.i32(m.n_features)
    w.u64(len(m.trees))
    for t in m.trees:
        _write_tree(w, t)


def _read_binary(r: _Reader) -> GbdtBinaryModel:
    cfg = _read_config(r)
    base = r.f64()
    n_features = r.i32()
    trees = [_read_tree(r) for _ in range(r.u64())]
    return GbdtBinaryModel(trees=trees, base_score=base, config=cfg, n_features=n_features)


def _write_multiclass(w: _Writer, m: GbdtMulticlassModel):
    _write_config(w, m.config)
    w.i32(m.n_features)
    w.i32(m.n_classes)
    w.array(m.base_scores, "<f8")
    for k in range(m.n_classes):
        w.u64(len(m.trees[k]))
        for t in m.trees[k]:
            _write_tree(w, t)


def _read_multiclass(r: _Reader) -> GbdtMulticlassModel:
    cfg = _read_config(r)
    n_features = r.i32()
    n_classes = r.i32()
    base = r.array("<f8")
    trees = [[_read_tree(r) for _ in range(r.u64())] for _ in range(n_classes)]
    return GbdtMulticlassModel(trees=trees, base_scores=base, config=cfg,
                               n_features=n_features, n_classes=n_classes)


def _write_calibrated(w: _Writer, m: CalibratedBinaryClassifier):
    _write_config(w, m.config)
    _write_binary(w, m.base)
    w.array(m.calibrator.breakpoints, "<f8")
    w.array(m.calibrator.values, "<f8")


def _read_calibrated(r: _Reader) -> CalibratedBinaryClassifier:
    cfg = _read_config(r)
    base = _read_binary(r)
    iso = IsotonicModel(breakpoints=r.array("<f8"), values=r.array("<f8"))
    return CalibratedBinaryClassifier(base=base, calibrator=iso, config=cfg)


def _kind_of(model) -> int:
    from .pipeline import PipelineModel

    if isinstance(model, GbdtBinaryModel):
        return KIND_BINARY
    if isinstance(model, GbdtMulticlassModel):
        return KIND_MULTICLASS
    if isinstance(model, CalibratedBinaryClassifier):
        return KIND_CALIBRATED
    if isinstance(model, PipelineModel):
        return KIND_PIPELINE
    raise FormatError(f"cannot serialize {type(model).__name__}")


def save_model(model, path):
    from .pipeline import PipelineModel

    w = _Writer()
    w.buf += MAGIC
    kind = _kind_of(model)
    w.u8(kind)
    if kind == KIND_BINARY:
        _write_binary(w, model)
    elif kind == KIND_MULTICLASS:
        _write_multiclass(w, model)
    elif kind == KIND_CALIBRATED:
        _write_calibrated(w, model)
    else:
        assert isinstance(model, PipelineModel)
        w.u64(len(model.classes))
        for name in model.classes:
            w.text(name)
        w.f64(model.threshold)
        w.text(model.edge_schema)
        w.text(model.instance_schema)
        _write_calibrated(w, model.boundary)
        _write_multiclass(w, model.semantic)
    with open(path, "wb") as fh:
        fh.write(bytes(w.buf))


def load_model(path):
    from .pipeline import PipelineModel

    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes, not a model file")
    r = _Reader(data)
    r.pos = len(MAGIC)
    kind = r.u8()
    if kind == KIND_BINARY:
        return _read_binary(r)
    if kind == KIND_MULTICLASS:
        return _read_multiclass(r)
    if kind == KIND_CALIBRATED:
        return _read_calibrated(r)
    if kind == KIND_PIPELINE:
        n = r.u64()
        classes = tuple(r.text() for _ in range(n))
        threshold = r.f64()
        edge_schema = r.text()
        instance_schema = r.text()
        boundary = _read_calibrated(r)
        semantic = _read_multiclass(r)
        return PipelineModel(boundary=boundary, semantic=semantic, threshold=threshold,
                             classes=classes, edge_schema=edge_schema,
                             instance_schema=instance_schema)
    raise FormatError(f"{path}: unknown model kind {kind}")
