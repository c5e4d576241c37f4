"""Shared builders for small hand-made part graphs."""

from __future__ import annotations

import numpy as np
import pytest

from pafr.graph import (
    EdgeRecord,
    FaceGrid,
    FaceRecord,
    GraphHeader,
    PartGraph,
    build_graph,
)

SLOTS = {"dihedral": 0, "concavity": 1, "curvature": 2, "centroid_distance": 3}


def make_header(d_F=1, d_E=4, K=3, classes=(), slots=SLOTS):
    return GraphHeader(d_F=d_F, d_E=d_E, K=K, classes=tuple(classes),
                       attr_slots=dict(slots) if slots else {})


def make_face(i, area=1.0, surface="plane", inst=None, cls=None, attrs=None,
              grid=None, d_F=1):
    if attrs is None:
        attrs = np.zeros(d_F)
    return FaceRecord(face_id=i, attrs=np.asarray(attrs, dtype=float),
                      surface_type=surface, area=float(area),
                      instance_id=inst, semantic_class=cls, grid=grid)


def make_edge(k, s, t, attrs=None, etype="line", length=1.0, samples=None,
              dihedral=2.0, concavity=0.0, curvature=0.0, centroid_distance=1.0):
    if attrs is None:
        attrs = np.array([dihedral, concavity, curvature, centroid_distance])
    return EdgeRecord(edge_id=k, face_s=s, face_t=t,
                      attrs=np.asarray(attrs, dtype=float), edge_type=etype,
                      length=float(length), samples=samples)


def make_part(n_faces, edge_pairs, part_id="toy", inst=None, cls=None,
              areas=None, header=None, **face_kw):
    """Build a labeled or unlabeled part from face count + edge endpoint pairs."""
    header = header or make_header()
    faces = []
    for i in range(n_faces):
        faces.append(make_face(
            i,
            area=areas[i] if areas is not None else 1.0,
            inst=inst[i] if inst is not None else None,
            cls=cls[i] if cls is not None else (0 if inst is not None else None),
            d_F=header.d_F,
            **face_kw,
        ))
    edges = [make_edge(k, s, t) for k, (s, t) in enumerate(edge_pairs)]
    return build_graph(part_id, faces, edges, header)


def flat_grid(z=0.0, normal=(0.0, 0.0, 1.0), u=3, v=3, x0=0.0, mask=None):
    """Planar UV grid in the z = const plane with a constant normal."""
    samples = np.zeros((u, v, 7))
    xs = np.linspace(x0, x0 + 1.0, u)
    ys = np.linspace(0.0, 1.0, v)
    for a in range(u):
        for b in range(v):
            samples[a, b, 0:3] = (xs[a], ys[b], z)
            samples[a, b, 3:6] = normal
            samples[a, b, 6] = 1.0 if mask is None else mask[a][b]
    return FaceGrid(u_res=u, v_res=v, samples=samples)


@pytest.fixture(scope="session")
def small_dataset():
    """120 deterministic synthetic parts for cross-module tests."""
    from pafr.synth import GenConfig, generate_part

    cfg = GenConfig(seed=11, n_parts=120)
    return cfg, [generate_part(cfg, i) for i in range(cfg.n_parts)]
