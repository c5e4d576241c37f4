"""Line-delimited interchange format: one JSON header record, one part per line.

Reals are serialized through :func:`json.dumps`, which emits the shortest
representation that round-trips exactly, so save -> load is lossless.
"""

from __future__ import annotations

import json
from typing import Iterable, Iterator

import numpy as np

from .errors import ParseError, SchemaError
from .graph import (
    EdgeRecord,
    EdgeSamples,
    FaceGrid,
    FaceRecord,
    GraphHeader,
    PartGraph,
    build_graph,
)

SCHEMA_ID = "pafr-graph/1"


def _header_obj(header: GraphHeader) -> dict:
    obj = {
        "schema": SCHEMA_ID,
        "d_F": header.d_F,
        "d_E": header.d_E,
        "K": header.K,
        "classes": list(header.classes),
    }
    if header.attr_slots:
        obj["attr_slots"] = dict(header.attr_slots)
    return obj


def _face_obj(f: FaceRecord) -> dict:
    obj = {
        "attrs": [float(x) for x in f.attrs],
        "surface_type": f.surface_type,
        "area": float(f.area),
    }
    if f.instance_id is not None:
        obj["instance_id"] = int(f.instance_id)
        obj["class"] = int(f.semantic_class)
    if f.grid is not None:
        obj["grid"] = {
            "u": f.grid.u_res,
            "v": f.grid.v_res,
            "data": [float(x) for x in f.grid.samples.reshape(-1)],
        }
    return obj


def _edge_obj(e: EdgeRecord) -> dict:
    obj = {
        "s": int(e.face_s),
        "t": int(e.face_t),
        "attrs": [float(x) for x in e.attrs],
        "edge_type": e.edge_type,
        "length": float(e.length),
    }
    if e.samples is not None:
        obj["samples"] = {
            "m": e.samples.m_res,
            "data": [float(x) for x in e.samples.samples.reshape(-1)],
        }
    return obj


def part_to_record(g: PartGraph) -> dict:
    return {
        "part_id": g.part_id,
        "faces": [_face_obj(f) for f in g.faces],
        "edges": [_edge_obj(e) for e in g.edges],
    }


def _parse_face(i, obj, header, part_id) -> FaceRecord:
    grid = None
    if "grid" in obj:
        go = obj["grid"]
        u, v = int(go["u"]), int(go["v"])
        data = np.asarray(go["data"], dtype=np.float64)
        if data.size != u * v * 7:
            raise SchemaError(f"{part_id}: face {i} grid data size {data.size} != {u}x{v}x7")
        grid = FaceGrid(u_res=u, v_res=v, samples=data.reshape(u, v, 7))
    return FaceRecord(
        face_id=i,
        attrs=np.asarray(obj["attrs"], dtype=np.float64),
        surface_type=obj["surface_type"],
        area=float(obj["area"]),
        instance_id=obj.get("instance_id"),
        semantic_class=obj.get("class"),
        grid=grid,
    )


def _parse_edge(k, obj, part_id) -> EdgeRecord:
    samples = None
    if "samples" in obj:
        so = obj["samples"]
        m = int(so["m"])
        data = np.asarray(so["data"], dtype=np.float64)
        if data.size != m * 15:
            raise SchemaError(f"{part_id}: edge {k} sample data size {data.size} != {m}x15")
        samples = EdgeSamples(m_res=m, samples=data.reshape(m, 15))
    return EdgeRecord(
        edge_id=k,
        face_s=int(obj["s"]),
        face_t=int(obj["t"]),
        attrs=np.asarray(obj["attrs"], dtype=np.float64),
        edge_type=obj["edge_type"],
        length=float(obj["length"]),
        samples=samples,
    )


def record_to_part(obj: dict, header: GraphHeader) -> PartGraph:
    part_id = obj["part_id"]
    faces = [_parse_face(i, fo, header, part_id) for i, fo in enumerate(obj["faces"])]
    edges = [_parse_edge(k, eo, part_id) for k, eo in enumerate(obj["edges"])]
    return build_graph(part_id, faces, edges, header)


def read_header(path) -> GraphHeader:
    with open(path, "rb") as fh:
        line = fh.readline()
    return _parse_header(line, path)


def _parse_header(line: bytes, path) -> GraphHeader:
    if not line:
        raise ParseError(f"{path}: empty file, header record missing")
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed header record: {exc}", byte_offset=0) from exc
    if obj.get("schema") != SCHEMA_ID:
        raise SchemaError(f"{path}: unknown schema {obj.get('schema')!r}, expected {SCHEMA_ID!r}")
    return GraphHeader(
        d_F=int(obj["d_F"]),
        d_E=int(obj["d_E"]),
        K=int(obj["K"]),
        classes=tuple(obj.get("classes", ())),
        attr_slots=dict(obj.get("attr_slots", {})),
    )


def load_parts(path) -> Iterator[PartGraph]:
    """Stream parts from an interchange file; parse errors carry the byte
    offset of the bad line and the id of the last good record."""
    with open(path, "rb") as fh:
        line = fh.readline()
        header = _parse_header(line, path)
        offset = len(line)
        last_good = None
        while True:
            line = fh.readline()
            if not line:
                break
            if line.strip() == b"":
                offset += len(line)
                continue
            try:
                obj = json.loads(line)
                part = record_to_part(obj, header)
            except json.JSONDecodeError as exc:
                raise ParseError(
                    f"{path}: malformed record after part {last_good!r} at byte offset {offset}: {exc}",
                    part_id=last_good,
                    byte_offset=offset,
                ) from exc
            yield part
            last_good = part.part_id
            offset += len(line)


def save_parts(parts: Iterable[PartGraph], path, header: GraphHeader | None = None) -> int:
    """Write parts one-per-line after a header record; returns the part count."""
    parts = iter(parts)
    first = next(parts, None)
    if header is None:
        if first is None:
            raise SchemaError(f"{path}: cannot infer a header from an empty part stream")
        header = first.header
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(_header_obj(header), separators=(",", ":")) + "\n")
        if first is not None:
            for g in _chain_one(first, parts):
                fh.write(json.dumps(part_to_record(g), separators=(",", ":")) + "\n")
                count += 1
    return count


def _chain_one(first, rest):
    yield first
    yield from rest
