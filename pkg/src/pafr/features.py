"""Enriched per-edge feature vectors and aggregated per-instance descriptors.

Edge rows concatenate the raw edge attribute vector with a fixed block of
neighbor-derived features; instance vectors pool face/edge attributes over a
face set. Vertices are not modeled, so dihedral angle, concavity and
curvature come either from sample tensors or from declared ``attr_slots``
positions of the raw edge attributes.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .errors import EmptyGridError, FeatureError
from .graph import EDGE_TYPES, FaceGrid, PartGraph, degrees, incident_edge_lists

log = logging.getLogger(__name__)

EPS = 1e-9

# 6-bin surface vocabulary for one-hots and histograms; bspline folds into
# the trailing "other" bin.
SURFACE_BINS = ("plane", "cylinder", "cone", "sphere", "torus", "other")

EDGE_DELTA_NAMES = (
    "dihedral_angle",
    "concavity_flag",
    "area_ratio",
    "perimeter_ratio",
    "normalized_length",
    "centroid_distance",
    *(f"edge_type={t}" for t in EDGE_TYPES),
    *(f"surface_s={s}" for s in SURFACE_BINS),
    *(f"surface_t={s}" for s in SURFACE_BINS),
    "log_abs_area_delta",
    "degree_s",
    "degree_t",
)
EDGE_DELTA_DIM = len(EDGE_DELTA_NAMES)  # 26

INSTANCE_FEATURE_NAMES = (
    "n_faces",
    "n_internal_edges",
    "n_boundary_edges",
    "log_characteristic_length",
    *(f"surface_hist={s}" for s in SURFACE_BINS),
    *(f"edge_hist={t}" for t in EDGE_TYPES),
    "curvature_mean",
    "curvature_std",
    "curvature_min",
    "curvature_max",
    "curvature_median",
    "spectral_connectivity",
    "boundary_loop_count",
    "boundary_dihedral_mean",
    "boundary_dihedral_std",
    "concave_internal_fraction",
    "log_total_area",
)
INSTANCE_FEATURE_DIM = len(INSTANCE_FEATURE_NAMES)  # 26

EDGE_SCHEMA_VERSION = "edge-attrs-v1"
INSTANCE_SCHEMA_VERSION = "instance-attrs-v1"


def _surface_bin(surface_type: str) -> int:
    if surface_type in SURFACE_BINS:
        return SURFACE_BINS.index(surface_type)
    return len(SURFACE_BINS) - 1


def grid_derived_face_stats(grid: FaceGrid):
    """Masked centroid, unit mean normal and valid-sample fraction of a grid."""
    mask = grid.samples[:, :, 6] == 1.0
    if not mask.any():
        raise EmptyGridError("grid has no valid samples")
    pos = grid.samples[:, :, 0:3][mask]
    nrm = grid.samples[:, :, 3:6][mask]
    centroid = pos.mean(axis=0)
    mean_normal = nrm.mean(axis=0)
    norm = np.linalg.norm(mean_normal)
    if norm > 0:
        mean_normal = mean_normal / norm
    else:
        log.warning("masked mean normal cancels to zero; leaving it zero")
    valid_fraction = mask.sum() / mask.size
    return centroid, mean_normal, valid_fraction


def _normal_near_edge(grid: FaceGrid, polyline: np.ndarray | None) -> np.ndarray:
    """Unit mean normal over the valid grid samples closest to an edge.

    Uses the closest 10% of valid samples by distance to the edge polyline;
    falls back to all valid samples when no polyline is available.
    """
    mask = grid.samples[:, :, 6] == 1.0
    if not mask.any():
        raise EmptyGridError("grid has no valid samples")
    pos = grid.samples[:, :, 0:3][mask]
    nrm = grid.samples[:, :, 3:6][mask]
    if polyline is not None and len(polyline):
        d = np.linalg.norm(pos[:, None, :] - polyline[None, :, :], axis=2).min(axis=1)
        keep = max(1, int(math.ceil(0.1 * len(d))))
        idx = np.argsort(d, kind="stable")[:keep]
        nrm = nrm[idx]
    mean = nrm.mean(axis=0)
    norm = np.linalg.norm(mean)
    return mean / norm if norm > 0 else mean


def edge_geometry(g: PartGraph):
    """Per-edge (dihedral, concavity, curvature, normalized centroid distance).

    Grids take precedence for dihedral/concavity when both incident faces
    carry them; otherwise the values are read from ``attr_slots`` positions
    of the raw edge attributes. Curvature comes from edge sample radii when
    present, else from a slot, else 0.

    Cached on the graph: every per-component descriptor reads these arrays,
    so recomputing them per component would make inference quadratic.
    """
    cached = getattr(g, "_edge_geometry", None)
    if cached is not None:
        return cached
    slots = g.header.attr_slots
    dihedral = np.zeros(g.m)
    concavity = np.zeros(g.m)
    curvature = np.zeros(g.m)
    centroid_dist = np.zeros(g.m)
    centroids = {}
    for i, f in enumerate(g.faces):
        if f.grid is not None:
            centroids[i] = grid_derived_face_stats(f.grid)[0]
    for k, e in enumerate(g.edges):
        fs, ft = g.faces[e.face_s], g.faces[e.face_t]
        polyline = e.samples.samples[:, 0:3] if e.samples is not None else None
        if fs.grid is not None and ft.grid is not None:
            ni = _normal_near_edge(fs.grid, polyline)
            nj = _normal_near_edge(ft.grid, polyline)
            # interior dihedral: pi for coplanar faces, pi/2 for a square step
            dihedral[k] = math.pi - math.acos(float(np.clip(np.dot(ni, nj), -1.0, 1.0)))
            if polyline is not None and len(polyline) >= 2:
                edir = polyline[-1] - polyline[0]
                nd = np.linalg.norm(edir)
                edir = edir / nd if nd > 0 else edir
            else:
                edir = np.zeros(3)
            concavity[k] = 1.0 if float(np.linalg.det(np.stack([ni, nj, edir]))) < -1e-12 else 0.0
        elif "dihedral" in slots and "concavity" in slots:
            dihedral[k] = float(e.attrs[slots["dihedral"]])
            concavity[k] = 1.0 if e.attrs[slots["concavity"]] >= 0.5 else 0.0
        else:
            raise FeatureError(
                f"{g.part_id}: edge {k} has neither face grids nor dihedral/concavity attr slots"
            )
        if e.samples is not None:
            r = e.samples.samples[:, 13]
            usable = np.isfinite(r) & (r != 0.0)
            curvature[k] = float(np.abs(1.0 / r[usable]).mean()) if usable.any() else 0.0
        elif "curvature" in slots:
            curvature[k] = float(e.attrs[slots["curvature"]])
        scale = math.sqrt(fs.area + ft.area) + EPS
        if e.face_s in centroids and e.face_t in centroids:
            raw = float(np.linalg.norm(centroids[e.face_s] - centroids[e.face_t]))
        elif "centroid_distance" in slots:
            raw = float(e.attrs[slots["centroid_distance"]])
        else:
            raw = 0.0
        centroid_dist[k] = raw / scale
    result = (dihedral, concavity, curvature, centroid_dist)
    object.__setattr__(g, "_edge_geometry", result)
    return result


def _guarded_ratio(a: float, b: float) -> float:
    lo, hi = (a, b) if a <= b else (b, a)
    return max(lo, EPS) / max(hi, EPS)


def enrich_edges(g: PartGraph) -> np.ndarray:
    """Per-edge feature matrix, shape (m, d_E + EDGE_DELTA_DIM)."""
    areas = np.array([f.area for f in g.faces])
    if (areas == 0).any():
        log.warning("%s: zero-area face, ratio features use an epsilon guard", g.part_id)
    perim = np.zeros(g.n)
    for e in g.edges:
        perim[e.face_s] += e.length
        perim[e.face_t] += e.length
    deg = degrees(g)
    dihedral, concavity, curvature, centroid_dist = edge_geometry(g)
    del curvature  # instance-level only

    out = np.zeros((g.m, g.header.d_E + EDGE_DELTA_DIM))
    for k, e in enumerate(g.edges):
        i, j = e.face_s, e.face_t
        row = out[k]
        row[: g.header.d_E] = e.attrs
        d = g.header.d_E
        row[d + 0] = dihedral[k]
        row[d + 1] = concavity[k]
        row[d + 2] = _guarded_ratio(areas[i], areas[j])
        row[d + 3] = _guarded_ratio(perim[i], perim[j])
        row[d + 4] = e.length / (math.sqrt(areas[i]) + math.sqrt(areas[j]) + EPS)
        row[d + 5] = centroid_dist[k]
        row[d + 6 + EDGE_TYPES.index(e.edge_type)] = 1.0
        row[d + 11 + _surface_bin(g.faces[i].surface_type)] = 1.0
        row[d + 17 + _surface_bin(g.faces[j].surface_type)] = 1.0
        row[d + 23] = math.log(abs(areas[i] - areas[j]) + EPS)
        row[d + 24] = deg[i]
        row[d + 25] = deg[j]
    return out


def _component_edges(g: PartGraph, cset):
    """(internal, boundary) edge ids of a face set, in edge-id order.
    Gathers only edges incident to the set, keeping per-component cost
    proportional to the component, not the whole graph."""
    incident = incident_edge_lists(g)
    internal = set()
    boundary = set()
    for v in cset:
        for k in incident[v]:
            e = g.edges[k]
            if e.face_s in cset and e.face_t in cset:
                internal.add(k)
            else:
                boundary.add(k)
    return sorted(internal), sorted(boundary)


def spectral_connectivity(g: PartGraph, C) -> float:
    """Algebraic connectivity of the induced simple subgraph; 0 when |C| <= 1
    or the subgraph is disconnected."""
    nodes = sorted(C)
    nc = len(nodes)
    if nc <= 1:
        return 0.0
    index = {v: i for i, v in enumerate(nodes)}
    cset = set(nodes)
    internal, _ = _component_edges(g, cset)
    adj = np.zeros((nc, nc))
    for k in internal:
        e = g.edges[k]
        adj[index[e.face_s], index[e.face_t]] = 1.0
        adj[index[e.face_t], index[e.face_s]] = 1.0
    # connectivity check first: eigvalsh would return a numerically tiny,
    # possibly negative lambda_2 for disconnected subgraphs
    seen = {nodes[0]}
    stack = [nodes[0]]
    nbrs = {v: [] for v in nodes}
    for k in internal:
        e = g.edges[k]
        nbrs[e.face_s].append(e.face_t)
        nbrs[e.face_t].append(e.face_s)
    while stack:
        u = stack.pop()
        for v in nbrs[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    if len(seen) < nc:
        return 0.0
    lap = np.diag(adj.sum(axis=1)) - adj
    eigs = np.linalg.eigvalsh(lap)
    return float(max(eigs[1], 0.0))


def boundary_loop_count(g: PartGraph, C) -> int:
    """Components of the boundary-edge graph of C, where two boundary edges
    are adjacent iff they share an incident face (inside or outside C).

    A face-sharing approximation of edge-loop topology: vertices are not in
    the model.
    """
    cset = set(C)
    _, boundary = _component_edges(g, cset)
    if not boundary:
        return 0
    parent = {k: k for k in boundary}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    by_face = {}
    for k in boundary:
        e = g.edges[k]
        for face in (e.face_s, e.face_t):
            if face in by_face:
                ra, rb = find(by_face[face]), find(k)
                if ra != rb:
                    parent[rb] = ra
            else:
                by_face[face] = k
    return len({find(k) for k in boundary})


def instance_features(g: PartGraph, C) -> np.ndarray:
    """Aggregate descriptor of a face set, shape (INSTANCE_FEATURE_DIM,)."""
    cset = set(C)
    if not cset:
        raise FeatureError("instance face set is empty")
    faces = sorted(cset)
    internal, boundary = _component_edges(g, cset)
    dihedral, concavity, curvature, _ = edge_geometry(g)

    z = np.zeros(INSTANCE_FEATURE_DIM)
    z[0] = len(faces)
    z[1] = len(internal)
    z[2] = len(boundary)
    total_area = sum(g.faces[i].area for i in faces)
    z[3] = math.log(math.sqrt(total_area) + EPS)
    for i in faces:
        z[4 + _surface_bin(g.faces[i].surface_type)] += 1.0
    z[4:10] /= len(faces)
    if internal:
        for k in internal:
            z[10 + EDGE_TYPES.index(g.edges[k].edge_type)] += 1.0
        z[10:15] /= len(internal)
        curv = curvature[internal]
        z[15] = curv.mean()
        z[16] = curv.std()
        z[17] = curv.min()
        z[18] = curv.max()
        z[19] = float(np.median(curv))
        z[24] = concavity[internal].mean()
    z[20] = spectral_connectivity(g, cset)
    z[21] = boundary_loop_count(g, cset)
    if boundary:
        dih = dihedral[boundary]
        z[22] = dih.mean()
        z[23] = dih.std()
    z[25] = math.log(total_area + EPS)
    return z
