"""Deterministic generator of labeled synthetic part graphs.

Each part is a ring of large planar stock faces with machining-feature
motifs attached. Attribute vectors are drawn from fixed class-conditional
distributions; there is no solid modeling. Boundary and interior edges
occupy disjoint dihedral-angle intervals when the noise level is zero and
overlap increasingly as it grows; the ambiguity rate swaps the drawn edge
attributes between the two populations.

Every part is independently reproducible: draws come from a counter-based
generator keyed by (seed, part index, stream id).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import PafrError
from .graph import EdgeRecord, FaceGrid, FaceRecord, GraphHeader, PartGraph, build_graph
from .io import save_parts

DEFAULT_CLASSES = (
    "stock",
    "through_hole",
    "blind_hole",
    "rect_pocket",
    "slot",
    "chamfer",
    "boss",
)

D_F = 4
D_E = 4
ATTR_SLOTS = {"dihedral": 0, "concavity": 1, "curvature": 2, "centroid_distance": 3}

PI = math.pi
# class-typical dihedral angles; all boundary values sit below 0.5*pi and
# all interior values above 0.55*pi, so a single threshold separates them
# exactly when noise is zero
STOCK_DIHEDRAL = 0.60 * PI
BOUNDARY_DIHEDRAL = {
    "through_hole": 0.38 * PI,
    "blind_hole": 0.38 * PI,
    "rect_pocket": 0.40 * PI,
    "slot": 0.40 * PI,
    "chamfer": 0.45 * PI,
    "boss": 0.42 * PI,
}
STOCK_LOG_AREA = 4.0
MOTIF_AREA_SCALE = {
    "through_hole": 1.0,
    "blind_hole": 1.0,
    "rect_pocket": 1.8,
    "slot": 1.5,
    "chamfer": 0.35,
    "boss": 1.8,
}


class GenerationError(PafrError):
    """Generated dataset violated a sanity bound."""


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    n_parts: int = 100
    classes: tuple[str, ...] = DEFAULT_CLASSES
    features_per_part: tuple[int, int] = (2, 8)
    noise: float = 0.15
    ambiguity: float = 0.1
    with_grids: bool = False
    split_fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)

    def __post_init__(self):
        lo, hi = self.features_per_part
        if lo < 0 or hi < lo:
            raise GenerationError(f"invalid features_per_part range {self.features_per_part}")
        if not 0.0 <= self.noise <= 1.0 or not 0.0 <= self.ambiguity <= 1.0:
            raise GenerationError("noise and ambiguity must lie in [0, 1]")
        if self.classes[0] != "stock":
            raise GenerationError("class 0 must be the stock class")


def gen_header(cfg: GenConfig) -> GraphHeader:
    return GraphHeader(
        d_F=D_F,
        d_E=D_E,
        K=len(cfg.classes),
        classes=tuple(cfg.classes),
        attr_slots=dict(ATTR_SLOTS),
    )


def part_rng(seed: int, part_index: int, stream: int = 0) -> np.random.Generator:
    m64 = (1 << 64) - 1
    key = ((seed & m64) << 64) | ((part_index & ((1 << 48) - 1)) << 16) | (stream & 0xFFFF)
    return np.random.Generator(np.random.Philox(key=key))


def _dihedral_sigma(noise: float) -> float:
    return 0.9 * noise


@dataclass
class _Builder:
    cfg: GenConfig
    rng: np.random.Generator
    faces: list = field(default_factory=list)
    edges: list = field(default_factory=list)

    def face(self, surface_type, area, instance_id, cls) -> int:
        fid = len(self.faces)
        attrs = np.array([
            math.log(area),
            float(["plane", "cylinder", "cone", "sphere", "torus", "bspline", "other"].index(surface_type)),
            self.rng.normal(0.0, 1.0),
            self.rng.normal(0.0, 1.0),
        ])
        self.faces.append(FaceRecord(
            face_id=fid, attrs=attrs, surface_type=surface_type, area=area,
            instance_id=instance_id, semantic_class=cls,
        ))
        return fid

    def edge(self, s, t, edge_type, dihedral_mean, concave, curvature, is_boundary):
        cfg = self.cfg
        rng = self.rng
        sigma = _dihedral_sigma(cfg.noise)
        # ambiguity: swap the attribute draw between the two populations
        flip = rng.random() < cfg.ambiguity
        if is_boundary and flip:
            dih_mean, conc, curv = STOCK_DIHEDRAL, 0.0, 0.0
        elif (not is_boundary) and flip:
            dih_mean, conc, curv = BOUNDARY_DIHEDRAL["rect_pocket"], 0.0, 0.0
        else:
            dih_mean, conc, curv = dihedral_mean, float(concave), curvature
        dihedral = float(np.clip(rng.normal(dih_mean, sigma) if sigma > 0 else dih_mean, 0.0, PI))
        a_s = self.faces[s].area
        a_t = self.faces[t].area
        length = 0.8 * math.sqrt(min(a_s, a_t)) * math.exp(rng.normal(0.0, 0.1 + 0.2 * cfg.noise))
        centroid_raw = 0.5 * (math.sqrt(a_s) + math.sqrt(a_t)) * rng.uniform(0.8, 1.2)
        if curv > 0:
            curv = curv * math.exp(rng.normal(0.0, 0.2 * cfg.noise))
        attrs = np.array([dihedral, conc, curv, centroid_raw])
        self.edges.append(EdgeRecord(
            edge_id=len(self.edges), face_s=s, face_t=t, attrs=attrs,
            edge_type=edge_type, length=length,
        ))


def _flat_grid(rng, z: float) -> FaceGrid:
    u = v = 4
    samples = np.zeros((u, v, 7))
    ox, oy = rng.uniform(-10, 10, size=2)
    for i in range(u):
        for j in range(v):
            samples[i, j, 0:3] = (ox + i, oy + j, z)
            samples[i, j, 3:6] = (0.0, 0.0, 1.0)
            samples[i, j, 6] = 1.0
    return FaceGrid(u_res=u, v_res=v, samples=samples)


def _motif_area(rng, cls_name: str, noise: float) -> float:
    return MOTIF_AREA_SCALE[cls_name] * math.exp(rng.normal(0.0, 0.25 * (1.0 + noise)))


def _add_through_hole(b, rng, inst, cls, stock_ids, noise):
    two = rng.random() < 0.5
    r = 0.35 * math.sqrt(_motif_area(rng, "through_hole", noise))
    curv = 1.0 / r
    f0 = b.face("cylinder", _motif_area(rng, "through_hole", noise), inst, cls)
    host_a, host_b = rng.choice(len(stock_ids), size=2, replace=False)
    bd = BOUNDARY_DIHEDRAL["through_hole"]
    if two:
        f1 = b.face("cylinder", _motif_area(rng, "through_hole", noise), inst, cls)
        b.edge(f0, f1, "line", 0.95 * PI, 0, 0.0, False)
        if rng.random() < 0.5:  # second seam: multi-edge between the same faces
            b.edge(f0, f1, "line", 0.95 * PI, 0, 0.0, False)
        b.edge(f0, stock_ids[host_a], "circle", bd, 0, curv, True)
        b.edge(f1, stock_ids[host_b], "circle", bd, 0, curv, True)
    else:
        b.edge(f0, stock_ids[host_a], "circle", bd, 0, curv, True)
        b.edge(f0, stock_ids[host_b], "circle", bd, 0, curv, True)


def _add_blind_hole(b, rng, inst, cls, stock_ids, noise):
    r = 0.35 * math.sqrt(_motif_area(rng, "blind_hole", noise))
    wall = b.face("cylinder", _motif_area(rng, "blind_hole", noise), inst, cls)
    floor = b.face("plane", 0.6 * _motif_area(rng, "blind_hole", noise), inst, cls)
    b.edge(wall, floor, "circle", 0.65 * PI, 1, 1.0 / r, False)
    host = stock_ids[rng.integers(len(stock_ids))]
    b.edge(wall, host, "circle", BOUNDARY_DIHEDRAL["blind_hole"], 0, 1.0 / r, True)


def _add_rect_pocket(b, rng, inst, cls, stock_ids, noise):
    floor = b.face("plane", _motif_area(rng, "rect_pocket", noise), inst, cls)
    walls = [b.face("plane", 0.5 * _motif_area(rng, "rect_pocket", noise), inst, cls)
             for _ in range(4)]
    for w in walls:
        b.edge(floor, w, "line", 0.65 * PI, 1, 0.0, False)
    b.edge(walls[0], walls[1], "line", 0.65 * PI, 1, 0.0, False)
    b.edge(walls[2], walls[3], "line", 0.65 * PI, 1, 0.0, False)
    host = stock_ids[rng.integers(len(stock_ids))]
    for w in walls:
        b.edge(w, host, "line", BOUNDARY_DIHEDRAL["rect_pocket"], 0, 0.0, True)


def _add_slot(b, rng, inst, cls, stock_ids, noise):
    floor = b.face("plane", _motif_area(rng, "slot", noise), inst, cls)
    walls = [b.face("plane", 0.5 * _motif_area(rng, "slot", noise), inst, cls)
             for _ in range(2)]
    for w in walls:
        b.edge(floor, w, "line", 0.70 * PI, 1, 0.0, False)
    host = stock_ids[rng.integers(len(stock_ids))]
    for w in walls:
        b.edge(w, host, "line", BOUNDARY_DIHEDRAL["slot"], 0, 0.0, True)
    if rng.random() < 0.4:
        r = 0.3 * math.sqrt(_motif_area(rng, "slot", noise))
        for _ in range(2):
            end = b.face("cylinder", 0.4 * _motif_area(rng, "slot", noise), inst, cls)
            b.edge(floor, end, "circle", 0.70 * PI, 1, 1.0 / r, False)
            b.edge(end, host, "circle", BOUNDARY_DIHEDRAL["slot"], 0, 1.0 / r, True)


def _add_chamfer(b, rng, inst, cls, stock_ids, noise):
    f = b.face("plane", _motif_area(rng, "chamfer", noise), inst, cls)
    host_a, host_b = rng.choice(len(stock_ids), size=2, replace=False)
    b.edge(f, stock_ids[host_a], "line", BOUNDARY_DIHEDRAL["chamfer"], 0, 0.0, True)
    b.edge(f, stock_ids[host_b], "line", BOUNDARY_DIHEDRAL["chamfer"], 0, 0.0, True)


def _add_boss(b, rng, inst, cls, stock_ids, noise):
    top = b.face("plane", _motif_area(rng, "boss", noise), inst, cls)
    walls = [b.face("plane", 0.5 * _motif_area(rng, "boss", noise), inst, cls)
             for _ in range(4)]
    for w in walls:
        b.edge(top, w, "line", 0.70 * PI, 0, 0.0, False)
    b.edge(walls[0], walls[1], "line", 0.70 * PI, 0, 0.0, False)
    b.edge(walls[2], walls[3], "line", 0.70 * PI, 0, 0.0, False)
    host = stock_ids[rng.integers(len(stock_ids))]
    for w in walls:
        b.edge(w, host, "line", BOUNDARY_DIHEDRAL["boss"], 1, 0.0, True)


_MOTIF_BUILDERS = {
    "through_hole": _add_through_hole,
    "blind_hole": _add_blind_hole,
    "rect_pocket": _add_rect_pocket,
    "slot": _add_slot,
    "chamfer": _add_chamfer,
    "boss": _add_boss,
}


def generate_part(cfg: GenConfig, part_index: int) -> PartGraph:
    """Build one labeled part; identical (seed, part index) gives an
    identical graph."""
    rng = part_rng(cfg.seed, part_index, stream=0)
    b = _Builder(cfg=cfg, rng=rng)
    header = gen_header(cfg)

    n_stock = int(rng.integers(6, 15))
    stock_ids = [
        b.face("plane", math.exp(rng.normal(STOCK_LOG_AREA, 0.2 + 0.3 * cfg.noise)), 0, 0)
        for _ in range(n_stock)
    ]
    for i in range(n_stock):
        b.edge(stock_ids[i], stock_ids[(i + 1) % n_stock], "line", STOCK_DIHEDRAL, 0, 0.0, False)

    lo, hi = cfg.features_per_part
    k = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
    feature_classes = [c for c in cfg.classes[1:] if c in _MOTIF_BUILDERS]
    for inst in range(1, k + 1):
        cls_name = feature_classes[int(rng.integers(len(feature_classes)))]
        cls = cfg.classes.index(cls_name)
        _MOTIF_BUILDERS[cls_name](b, rng, inst, cls, stock_ids, cfg.noise)

    faces = b.faces
    if cfg.with_grids:
        faces = [
            FaceRecord(
                face_id=f.face_id, attrs=f.attrs, surface_type=f.surface_type,
                area=f.area, instance_id=f.instance_id, semantic_class=f.semantic_class,
                grid=_flat_grid(rng, z=float(f.face_id)) if f.surface_type == "plane" else None,
            )
            for f in b.faces
        ]
    return build_graph(f"part-{part_index:06d}", faces, b.edges, header)


def _split_order(seed: int, n_parts: int) -> list[int]:
    def h(idx):
        digest = hashlib.blake2b(f"{seed}|{idx}".encode(), digest_size=8).digest()
        return int.from_bytes(digest, "little")

    return sorted(range(n_parts), key=lambda i: (h(i), i))


def split_indices(cfg: GenConfig) -> dict:
    """Deterministic train/val/test split of part indices by index hash."""
    order = _split_order(cfg.seed, cfg.n_parts)
    f_train, f_val, _ = cfg.split_fractions
    n_train = round(f_train * cfg.n_parts)
    n_val = round(f_val * cfg.n_parts)
    return {
        "train": sorted(order[:n_train]),
        "val": sorted(order[n_train:n_train + n_val]),
        "test": sorted(order[n_train + n_val:]),
    }


def generate_dataset(cfg: GenConfig, out_dir) -> dict:
    """Write dataset.jsonl plus manifest.json; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    data_path = os.path.join(out_dir, "dataset.jsonl")
    class_counts = {name: 0 for name in cfg.classes}
    n_boundary = 0
    n_edges = 0
    n_faces = 0
    n_instances = 0

    def stream():
        nonlocal n_boundary, n_edges, n_faces, n_instances
        for idx in range(cfg.n_parts):
            g = generate_part(cfg, idx)
            insts = {}
            for f in g.faces:
                insts[f.instance_id] = f.semantic_class
            for cls in insts.values():
                class_counts[cfg.classes[cls]] += 1
            n_instances += len(insts)
            ell = [f.instance_id for f in g.faces]
            for e in g.edges:
                n_boundary += ell[e.face_s] != ell[e.face_t]
            n_edges += g.m
            n_faces += g.n
            yield g

    save_parts(stream(), data_path, header=gen_header(cfg))
    balance = n_boundary / n_edges if n_edges else 0.0
    if cfg.n_parts >= 50 and not 0.10 <= balance <= 0.60:
        raise GenerationError(f"boundary-edge fraction {balance:.3f} outside [0.10, 0.60]")
    splits = split_indices(cfg)
    manifest = {
        "schema": "pafr-manifest/1",
        "seed": cfg.seed,
        "n_parts": cfg.n_parts,
        "classes": list(cfg.classes),
        "config": {
            "features_per_part": list(cfg.features_per_part),
            "noise": cfg.noise,
            "ambiguity": cfg.ambiguity,
            "with_grids": cfg.with_grids,
        },
        "splits": {k: [f"part-{i:06d}" for i in v] for k, v in splits.items()},
        "class_instance_counts": class_counts,
        "n_instances": n_instances,
        "n_faces": n_faces,
        "n_edges": n_edges,
        "edge_label_balance": {"boundary_fraction": balance},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=False)
        fh.write("\n")
    return manifest
