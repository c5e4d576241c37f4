"""Part-graph data model: faces, edges, validation and ground-truth labeling.

A part is an undirected face-adjacency graph: one node per B-Rep face, one
:class:`EdgeRecord` per B-Rep edge. Two faces may share several B-Rep edges
(multi-edge); the boolean adjacency matrix collapses them.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import LabelingError, ManifoldError, SchemaError, StructureError

SURFACE_TYPES = ("plane", "cylinder", "cone", "sphere", "torus", "bspline", "other")
EDGE_TYPES = ("line", "circle", "ellipse", "bspline", "other")

GRID_CHANNELS = 7  # position(3) + normal(3) + validity mask(1)
EDGE_SAMPLE_CHANNELS = 15  # point, tangent, normal, binormal, mask, radius, torsion


@dataclass(frozen=True, eq=False)
class FaceGrid:
    """Regular UV sample grid of one face: U x V x 7 tensor."""

    u_res: int
    v_res: int
    samples: np.ndarray

    def validate(self):
        if self.u_res < 2 or self.v_res < 2:
            raise SchemaError(f"grid resolution must be >= 2, got {self.u_res}x{self.v_res}")
        if self.samples.shape != (self.u_res, self.v_res, GRID_CHANNELS):
            raise SchemaError(
                f"grid tensor shape {self.samples.shape} != "
                f"({self.u_res}, {self.v_res}, {GRID_CHANNELS})"
            )
        mask = self.samples[:, :, 6]
        if not np.isin(mask, (0.0, 1.0)).all():
            raise SchemaError("grid validity mask must be 0/1")
        normals = self.samples[:, :, 3:6][mask == 1.0]
        if normals.size:
            norms = np.linalg.norm(normals, axis=1)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise SchemaError("valid grid normals must be unit length")


@dataclass(frozen=True, eq=False)
class EdgeSamples:
    """M samples along one edge, 15 channels each."""

    m_res: int
    samples: np.ndarray

    def validate(self):
        if self.m_res < 2:
            raise SchemaError(f"edge sample count must be >= 2, got {self.m_res}")
        if self.samples.shape != (self.m_res, EDGE_SAMPLE_CHANNELS):
            raise SchemaError(
                f"edge sample shape {self.samples.shape} != ({self.m_res}, {EDGE_SAMPLE_CHANNELS})"
            )
        if not np.isin(self.samples[:, 12], (0.0, 1.0)).all():
            raise SchemaError("edge trim mask must be 0/1")


@dataclass(frozen=True, eq=False)
class FaceRecord:
    face_id: int
    attrs: np.ndarray
    surface_type: str
    area: float
    instance_id: int | None = None
    semantic_class: int | None = None
    grid: FaceGrid | None = None

    @property
    def has_labels(self) -> bool:
        return self.instance_id is not None


@dataclass(frozen=True, eq=False)
class EdgeRecord:
    edge_id: int
    face_s: int
    face_t: int
    attrs: np.ndarray
    edge_type: str
    length: float
    samples: EdgeSamples | None = None


@dataclass(frozen=True)
class GraphHeader:
    """Dataset-wide declarations shared by all parts in one file."""

    d_F: int
    d_E: int
    K: int
    classes: tuple[str, ...] = ()
    attr_slots: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.classes and len(self.classes) != self.K:
            raise SchemaError(f"{len(self.classes)} class names declared but K={self.K}")


@dataclass(frozen=True, eq=False)
class PartGraph:
    part_id: str
    faces: tuple[FaceRecord, ...]
    edges: tuple[EdgeRecord, ...]
    header: GraphHeader

    @property
    def n(self) -> int:
        return len(self.faces)

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def has_labels(self) -> bool:
        return all(f.has_labels for f in self.faces)


@dataclass
class ValidationReport:
    part_id: str
    warnings: list[str] = field(default_factory=list)
    disconnected_instances: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.warnings


def build_graph(part_id, faces, edges, header) -> PartGraph:
    """Assemble and validate a part graph.

    Raises :class:`StructureError` for dangling face indices,
    :class:`ManifoldError` for self-loop edges and :class:`SchemaError` for
    attribute-length mismatches. Single-face parts with no edges are legal.
    """
    if not faces:
        raise StructureError(f"{part_id}: part has no faces")
    n = len(faces)
    labeled = [f.instance_id is not None for f in faces]
    for f in faces:
        if len(f.attrs) != header.d_F:
            raise SchemaError(
                f"{part_id}: face {f.face_id} has {len(f.attrs)} attrs, header d_F={header.d_F}"
            )
        if f.area < 0:
            raise SchemaError(f"{part_id}: face {f.face_id} has negative area")
        if f.surface_type not in SURFACE_TYPES:
            raise SchemaError(f"{part_id}: unknown surface type {f.surface_type!r}")
        if (f.instance_id is None) != (f.semantic_class is None):
            raise SchemaError(
                f"{part_id}: face {f.face_id} must carry instance_id and class together"
            )
        if f.semantic_class is not None and not 0 <= f.semantic_class < header.K:
            raise SchemaError(f"{part_id}: face {f.face_id} class out of range [0,{header.K})")
        if f.grid is not None:
            f.grid.validate()
    if any(labeled) and not all(labeled):
        raise SchemaError(f"{part_id}: ground truth present on some faces but not all")
    for e in edges:
        if e.face_s == e.face_t:
            raise ManifoldError(f"{part_id}: edge {e.edge_id} joins face {e.face_s} to itself")
        if not (0 <= e.face_s < n and 0 <= e.face_t < n):
            raise StructureError(f"{part_id}: edge {e.edge_id} references a missing face")
        if len(e.attrs) != header.d_E:
            raise SchemaError(
                f"{part_id}: edge {e.edge_id} has {len(e.attrs)} attrs, header d_E={header.d_E}"
            )
        if e.length < 0:
            raise SchemaError(f"{part_id}: edge {e.edge_id} has negative length")
        if e.edge_type not in EDGE_TYPES:
            raise SchemaError(f"{part_id}: unknown edge type {e.edge_type!r}")
        if e.samples is not None:
            e.samples.validate()
    return PartGraph(part_id=part_id, faces=tuple(faces), edges=tuple(edges), header=header)


def adjacency_matrix(g: PartGraph) -> np.ndarray:
    """Boolean n x n adjacency; parallel edges collapse to a single 1."""
    a = np.zeros((g.n, g.n), dtype=bool)
    for e in g.edges:
        a[e.face_s, e.face_t] = True
        a[e.face_t, e.face_s] = True
    return a


def adjacency_lists(g: PartGraph) -> list[list[int]]:
    """Simple-graph neighbor lists (multi-edges collapsed), sorted."""
    nbrs = [set() for _ in range(g.n)]
    for e in g.edges:
        nbrs[e.face_s].add(e.face_t)
        nbrs[e.face_t].add(e.face_s)
    return [sorted(s) for s in nbrs]


def incident_edge_lists(g: PartGraph) -> list[list[int]]:
    """Edge ids incident to each face, in edge-id order; cached on the graph
    so repeated per-component queries stay linear in the component size."""
    cached = getattr(g, "_incident_edges", None)
    if cached is None:
        cached = [[] for _ in range(g.n)]
        for k, e in enumerate(g.edges):
            cached[e.face_s].append(k)
            cached[e.face_t].append(k)
        object.__setattr__(g, "_incident_edges", cached)
    return cached


def degrees(g: PartGraph) -> np.ndarray:
    return np.array([len(nb) for nb in adjacency_lists(g)], dtype=np.int64)


def binary_edge_labels(g: PartGraph) -> np.ndarray:
    """Per-edge label: 1 if both incident faces share an instance id, else 0."""
    if not g.has_labels:
        raise LabelingError(f"{g.part_id}: ground-truth instance ids missing")
    ell = [f.instance_id for f in g.faces]
    return np.array([1 if ell[e.face_s] == ell[e.face_t] else 0 for e in g.edges], dtype=np.uint8)


def validate_instances(g: PartGraph) -> ValidationReport:
    """Check that each ground-truth instance is connected in the graph.

    Disconnected instances are reported as warnings, not rejected; see
    :func:`split_instance_ids` for the split policy applied downstream.
    """
    report = ValidationReport(part_id=g.part_id)
    if not g.has_labels:
        return report
    split = split_instance_ids(g)
    original = np.array([f.instance_id for f in g.faces])
    for inst in sorted(set(original.tolist())):
        pieces = set(split[original == inst].tolist())
        if len(pieces) > 1:
            report.disconnected_instances.append(inst)
            report.warnings.append(
                f"instance {inst} is disconnected ({len(pieces)} components); split for labeling"
            )
    return report


def split_instance_ids(g: PartGraph) -> np.ndarray:
    """Per-face instance ids with disconnected instances split per component.

    Components keep the original id where the instance is connected; extra
    components get fresh ids above the current maximum, assigned in order of
    smallest contained face index so the result is deterministic.
    """
    if not g.has_labels:
        raise LabelingError(f"{g.part_id}: ground-truth instance ids missing")
    original = [f.instance_id for f in g.faces]
    nbrs = adjacency_lists(g)
    out = np.full(g.n, -1, dtype=np.int64)
    next_id = max(original) + 1 if original else 0
    seen = [False] * g.n
    for start in range(g.n):
        if seen[start]:
            continue
        inst = original[start]
        comp = [start]
        seen[start] = True
        stack = [start]
        while stack:
            u = stack.pop()
            for v in nbrs[u]:
                if not seen[v] and original[v] == inst:
                    seen[v] = True
                    comp.append(v)
                    stack.append(v)
        if (out[np.array([i for i in range(g.n) if original[i] == inst])] >= 0).any():
            new_id = next_id
            next_id += 1
        else:
            new_id = inst
        out[np.array(comp)] = new_id
    return out


def ground_truth_instances(g: PartGraph, split: bool = True) -> list[tuple[frozenset, int]]:
    """Ground-truth (face set, class) pairs, ordered by smallest face index.

    With ``split=True`` (the default policy) disconnected instances are
    split per connected component.
    """
    ids = split_instance_ids(g) if split else np.array([f.instance_id for f in g.faces])
    groups = defaultdict(list)
    for i, inst in enumerate(ids.tolist()):
        groups[inst].append(i)
    out = [(frozenset(v), g.faces[v[0]].semantic_class) for v in groups.values()]
    out.sort(key=lambda t: min(t[0]))
    return out


def graphs_equal(a: PartGraph, b: PartGraph) -> bool:
    """Structural equality over every field, bitwise on tensors."""
    if a.part_id != b.part_id or a.n != b.n or a.m != b.m or a.header != b.header:
        return False
    for fa, fb in zip(a.faces, b.faces):
        if (
            fa.face_id != fb.face_id
            or fa.surface_type != fb.surface_type
            or fa.area != fb.area
            or fa.instance_id != fb.instance_id
            or fa.semantic_class != fb.semantic_class
            or not np.array_equal(fa.attrs, fb.attrs)
        ):
            return False
        if (fa.grid is None) != (fb.grid is None):
            return False
        if fa.grid is not None and not (
            fa.grid.u_res == fb.grid.u_res
            and fa.grid.v_res == fb.grid.v_res
            and np.array_equal(fa.grid.samples, fb.grid.samples)
        ):
            return False
    for ea, eb in zip(a.edges, b.edges):
        if (
            ea.edge_id != eb.edge_id
            or ea.face_s != eb.face_s
            or ea.face_t != eb.face_t
            or ea.edge_type != eb.edge_type
            or ea.length != eb.length
            or not np.array_equal(ea.attrs, eb.attrs)
        ):
            return False
        if (ea.samples is None) != (eb.samples is None):
            return False
        if ea.samples is not None and not (
            ea.samples.m_res == eb.samples.m_res
            and np.array_equal(ea.samples.samples, eb.samples.samples)
        ):
            return False
    return True
