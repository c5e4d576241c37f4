"""Command-line surface: gen | train | infer | eval | sweep | inspect.

Exit codes are contractual: 0 success, 1 runtime failure, 2 usage or
configuration error. Every subcommand is deterministic given its flags;
``PAFR_LOG`` (debug | info | warning) controls verbosity, ``--quiet``
forces warnings only.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np

from .errors import PafrError
from .features import enrich_edges
from .gbdt import TrainConfig
from .graph import PartGraph, binary_edge_labels, ground_truth_instances, validate_instances
from .io import load_parts
from .metrics import (
    calibration_report,
    edge_binary_metrics,
    panoptic_quality,
    recognition_localization_accuracy,
)
from .pipeline import infer as pipeline_infer
from .pipeline import train_pipeline
from .serialize import load_model, save_model
from .synth import GenConfig, generate_dataset

log = logging.getLogger("pafr")

PRED_SCHEMA = "pafr-pred/1"
EVAL_SCHEMA = "pafr-eval/1"


class UsageError(Exception):
    """Bad flag combination or configuration; maps to exit code 2."""


# ---------------------------------------------------------------------------
# shared helpers

def _setup_logging(quiet: bool):
    level_name = os.environ.get("PAFR_LOG", "info").lower()
    level = {"debug": logging.DEBUG, "info": logging.INFO,
             "warning": logging.WARNING}.get(level_name)
    if level is None:
        raise UsageError(f"PAFR_LOG must be debug, info or warning, not {level_name!r}")
    if quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", force=True)


def _check_threads(n: int):
    if n < 1:
        raise UsageError(f"--threads must be >= 1, got {n}")


def _dataset_paths(data: str):
    """A --data argument is either a dataset directory (dataset.jsonl +
    manifest.json) or a bare interchange file (no split information)."""
    if os.path.isdir(data):
        data_path = os.path.join(data, "dataset.jsonl")
        manifest_path = os.path.join(data, "manifest.json")
        if not os.path.exists(data_path):
            raise UsageError(f"{data}: no dataset.jsonl inside")
        manifest = None
        if os.path.exists(manifest_path):
            with open(manifest_path, encoding="utf-8") as fh:
                manifest = json.load(fh)
        return data_path, manifest
    if not os.path.exists(data):
        raise UsageError(f"{data}: no such file or directory")
    return data, None


def _split_ids(manifest, split: str):
    if split == "all":
        return None
    if manifest is None:
        raise UsageError(f"--split {split} needs a dataset directory with a manifest")
    try:
        return set(manifest["splits"][split])
    except KeyError:
        raise UsageError(f"manifest has no split named {split!r}") from None


def _load_split(data: str, split: str) -> list[PartGraph]:
    data_path, manifest = _dataset_paths(data)
    wanted = _split_ids(manifest, split)
    parts = [g for g in load_parts(data_path) if wanted is None or g.part_id in wanted]
    log.info("loaded %d parts from %s (split=%s)", len(parts), data_path, split)
    return parts


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise UsageError(f"{flag} expects a comma-separated integer list, got {text!r}") from None


def _class_indices(names, classes) -> frozenset:
    out = set()
    for name in names:
        if name not in classes:
            raise UsageError(f"unknown class {name!r}; dataset classes: {', '.join(classes)}")
        out.add(classes.index(name))
    return frozenset(out)


def _train_configs(args) -> tuple[TrainConfig, TrainConfig]:
    try:
        binary = TrainConfig(
            n_trees=args.trees_binary, max_depth=args.depth_binary,
            learning_rate=args.learning_rate, lambda_l2=args.lambda_l2,
            min_child_hessian=args.min_child_hessian, n_folds=args.folds,
            seed=args.seed,
        )
        multi = TrainConfig(
            n_trees=args.trees_multiclass, max_depth=args.depth_multiclass,
            learning_rate=args.learning_rate, lambda_l2=args.lambda_l2,
            min_child_hessian=args.min_child_hessian, n_folds=args.folds,
            seed=args.seed,
        )
    except PafrError as exc:
        raise UsageError(str(exc)) from exc
    return binary, multi


# ---------------------------------------------------------------------------
# predictions file

def _write_predictions(preds, path, classes=()):
    def name(cls):
        return classes[cls] if cls < len(classes) else str(cls)

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"schema": PRED_SCHEMA}, separators=(",", ":")) + "\n")
        for p in preds:
            record = {
                "part_id": p.part_id,
                "instances": [
                    {"faces": sorted(faces), "class": cls, "class_name": name(cls),
                     "confidence": conf}
                    for faces, cls, conf in p.instances
                ],
                "edge_probs": [float(x) for x in p.edge_probs],
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def _read_predictions(path) -> dict:
    """part_id -> (instances, edge_probs | None)."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        head = fh.readline()
        if not head:
            raise PafrError(f"{path}: empty predictions file, header missing")
        obj = json.loads(head)
        if obj.get("schema") != PRED_SCHEMA:
            raise PafrError(f"{path}: unknown predictions schema {obj.get('schema')!r}")
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            instances = [
                (frozenset(it["faces"]), int(it["class"]))
                for it in rec["instances"]
            ]
            probs = rec.get("edge_probs")
            out[rec["part_id"]] = (instances, None if probs is None else np.asarray(probs))
    return out


# ---------------------------------------------------------------------------
# evaluation report

EVAL_REPORT_JSONSCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "n_parts", "threshold", "exclude_classes",
                 "instance_metrics", "instance_metrics_excl_stock", "edge_metrics"],
    "properties": {
        "schema": {"const": EVAL_SCHEMA},
        "n_parts": {"type": "integer", "minimum": 0},
        "threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "exclude_classes": {"type": "array", "items": {"type": "string"}},
        "instance_metrics": {"$ref": "#/$defs/instance"},
        "instance_metrics_excl_stock": {"$ref": "#/$defs/instance"},
        "edge_metrics": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["n_edges", "accuracy", "precision", "recall", "f1", "ece"],
                    "properties": {
                        "n_edges": {"type": "integer", "minimum": 1},
                        "accuracy": {"type": "number"},
                        "precision": {"type": "number"},
                        "recall": {"type": "number"},
                        "f1": {"type": "number"},
                        "ece": {"type": "number"},
                    },
                },
            ]
        },
    },
    "$defs": {
        "instance": {
            "type": "object",
            "required": ["pq", "sq", "rq", "n_tp", "n_fp", "n_fn", "rl_accuracy",
                         "per_class_pq"],
            "properties": {
                "pq": {"type": "number"}, "sq": {"type": "number"},
                "rq": {"type": "number"},
                "n_tp": {"type": "integer"}, "n_fp": {"type": "integer"},
                "n_fn": {"type": "integer"},
                "rl_accuracy": {"type": "number"},
                "per_class_pq": {"type": "object",
                                 "additionalProperties": {"type": "number"}},
            },
        }
    },
}


def _instance_block(pairs, classes, exclude: frozenset) -> dict:
    rep = panoptic_quality(pairs, exclude)
    return {
        "pq": rep.pq, "sq": rep.sq, "rq": rep.rq,
        "n_tp": rep.n_tp, "n_fp": rep.n_fp, "n_fn": rep.n_fn,
        "rl_accuracy": recognition_localization_accuracy(pairs, exclude),
        "per_class_pq": {classes[c]: pq for c, pq in rep.per_class.items()},
    }


def build_eval_report(parts, predictions, classes, exclude: frozenset,
                      threshold: float, n_bins: int = 10) -> dict:
    """Machine-readable evaluation report over (part, prediction) pairs.

    Edge metrics use the per-edge probabilities carried by the predictions
    file and are computed only when every part provides them; class
    exclusion never touches them.
    """
    pairs = []
    probs_all = []
    labels_all = []
    have_probs = True
    for g in parts:
        if g.part_id not in predictions:
            raise PafrError(f"predictions file has no record for part {g.part_id!r}")
        instances, probs = predictions[g.part_id]
        pairs.append((instances, ground_truth_instances(g)))
        if probs is None or len(probs) != g.m:
            have_probs = False
        elif have_probs:
            probs_all.append(probs)
            labels_all.append(binary_edge_labels(g))
    edge_block = None
    if have_probs and probs_all:
        p = np.concatenate(probs_all)
        y = np.concatenate(labels_all)
        acc, precision, recall, f1 = edge_binary_metrics((p >= threshold).astype(int), y)
        ece, _ = calibration_report(p, y, n_bins=n_bins)
        edge_block = {"n_edges": int(p.size), "accuracy": acc, "precision": precision,
                      "recall": recall, "f1": f1, "ece": ece}
    report = {
        "schema": EVAL_SCHEMA,
        "n_parts": len(parts),
        "threshold": threshold,
        "exclude_classes": sorted(classes[c] for c in exclude),
        "instance_metrics": _instance_block(pairs, classes, exclude),
        "instance_metrics_excl_stock": _instance_block(
            pairs, classes, exclude | {classes.index("stock")} if "stock" in classes else exclude
        ),
        "edge_metrics": edge_block,
    }
    import jsonschema

    jsonschema.validate(report, EVAL_REPORT_JSONSCHEMA)
    return report


def _print_eval_table(report: dict, out=sys.stdout):
    def row(label, value):
        out.write(f"  {label:<28}{value}\n")

    out.write(f"evaluation over {report['n_parts']} parts "
              f"(threshold {report['threshold']})\n")
    for key, title in (("instance_metrics", "instance metrics"),
                       ("instance_metrics_excl_stock", "instance metrics (no stock)")):
        blk = report[key]
        out.write(title + ":\n")
        row("PQ / SQ / RQ", f"{blk['pq']:.4f} / {blk['sq']:.4f} / {blk['rq']:.4f}")
        row("TP / FP / FN", f"{blk['n_tp']} / {blk['n_fp']} / {blk['n_fn']}")
        row("RL accuracy", f"{blk['rl_accuracy']:.4f}")
    blk = report["edge_metrics"]
    out.write("edge metrics:\n")
    if blk is None:
        row("(no per-edge probabilities)", "-")
    else:
        row("accuracy / F1", f"{blk['accuracy']:.4f} / {blk['f1']:.4f}")
        row("precision / recall", f"{blk['precision']:.4f} / {blk['recall']:.4f}")
        row("ECE", f"{blk['ece']:.4f}")


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen(args) -> int:
    lo_hi = _parse_int_list(args.features, "--features")
    if len(lo_hi) != 2:
        raise UsageError("--features expects LO,HI")
    try:
        cfg = GenConfig(
            seed=args.seed, n_parts=args.parts,
            classes=tuple(args.classes.split(",")) if args.classes else GenConfig.classes,
            features_per_part=(lo_hi[0], lo_hi[1]),
            noise=args.noise, ambiguity=args.ambiguity, with_grids=args.with_grids,
        )
    except PafrError as exc:
        raise UsageError(str(exc)) from exc
    manifest = generate_dataset(cfg, args.out)
    log.info("wrote %d parts to %s (boundary fraction %.3f)", cfg.n_parts, args.out,
             manifest["edge_label_balance"]["boundary_fraction"])
    return 0


def cmd_train(args) -> int:
    parts = _load_split(args.data, args.split)
    if not parts:
        raise UsageError(f"split {args.split!r} of {args.data} holds no parts")
    classes = parts[0].header.classes
    cfg_binary, cfg_multi = _train_configs(args)
    model, report = train_pipeline(parts, classes, cfg_binary, cfg_multi,
                                   threshold=args.threshold)
    save_model(model, args.out)
    report_path = args.report if args.report else args.out + ".report.json"
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    log.info("model -> %s, report -> %s", args.out, report_path)
    log.info("edges %d (boundary fraction %.3f), instances %d, OOF ECE %.4f",
             report.n_edges, report.boundary_fraction, report.n_instances,
             report.oof_ece)
    log.info("stage seconds: boundary %.1f, semantic %.1f",
             report.instance_stage_seconds, report.semantic_stage_seconds)
    return 0


def cmd_infer(args) -> int:
    model = load_model(args.model)
    parts = _load_split(args.data, args.split)
    tau = args.threshold  # None defers to the threshold stored in the model
    preds = (pipeline_infer(model, g, tau) for g in parts)
    _write_predictions(preds, args.out, getattr(model, "classes", ()))
    log.info("wrote predictions for %d parts to %s", len(parts), args.out)
    return 0


def cmd_eval(args) -> int:
    if (args.pred is None) == (args.model is None):
        raise UsageError("eval needs exactly one of --pred or --model")
    parts = _load_split(args.data, args.split)
    if not parts:
        raise UsageError(f"split {args.split!r} of {args.data} holds no parts")
    classes = list(parts[0].header.classes)
    exclude = _class_indices(
        [s for s in (args.exclude_classes or "").split(",") if s], classes)
    if args.pred is not None:
        predictions = _read_predictions(args.pred)
    else:
        model = load_model(args.model)
        predictions = {}
        for g in parts:
            p = pipeline_infer(model, g, args.threshold)
            predictions[g.part_id] = ([(f, c) for f, c, _ in p.instances], p.edge_probs)
    report = build_eval_report(parts, predictions, classes, exclude,
                               args.threshold if args.threshold is not None else 0.5)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
        log.info("report -> %s", args.out)
    _print_eval_table(report)
    return 0


def _nested_subset(part_ids, size: int, seed: int) -> list[str]:
    """First ``size`` entries of a seed-keyed permutation, so smaller subsets
    nest inside larger ones for the same seed."""
    def key(pid):
        digest = hashlib.blake2b(f"{seed}:{pid}".encode(), digest_size=8).digest()
        return (int.from_bytes(digest, "little"), pid)

    return sorted(part_ids, key=key)[:size]


SWEEP_COLUMNS = ("train_size", "seed", "pq", "pq_excl_stock", "rl_acc",
                 "edge_acc", "edge_f1", "ece")


def cmd_sweep(args) -> int:
    sizes = _parse_int_list(args.sizes, "--sizes")
    seeds = _parse_int_list(args.seeds, "--seeds")
    if not sizes or not seeds:
        raise UsageError("--sizes and --seeds must be non-empty")
    data_path, manifest = _dataset_paths(args.data)
    if manifest is None:
        raise UsageError("sweep needs a dataset directory with a manifest")
    train_ids = manifest["splits"]["train"]
    test_ids = set(manifest["splits"]["test"])
    if max(sizes) > len(train_ids):
        raise UsageError(f"requested train size {max(sizes)} exceeds the "
                         f"{len(train_ids)}-part train split")
    by_id = {g.part_id: g for g in load_parts(data_path)}
    classes = next(iter(by_id.values())).header.classes
    test_parts = [by_id[i] for i in sorted(test_ids)]
    stock = frozenset({list(classes).index("stock")}) if "stock" in classes else frozenset()

    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for size in sizes:
            for seed in seeds:
                subset = [by_id[i] for i in _nested_subset(train_ids, size, seed)]
                ns = argparse.Namespace(**vars(args))
                ns.seed = seed
                cfg_binary, cfg_multi = _train_configs(ns)
                model, _ = train_pipeline(subset, classes, cfg_binary, cfg_multi,
                                          threshold=args.threshold)
                pairs = []
                probs_all = []
                labels_all = []
                for g in test_parts:
                    p = pipeline_infer(model, g)
                    pairs.append(([(f, c) for f, c, _ in p.instances],
                                  ground_truth_instances(g)))
                    probs_all.append(p.edge_probs)
                    labels_all.append(binary_edge_labels(g))
                probs = np.concatenate(probs_all)
                labels = np.concatenate(labels_all)
                acc, _, _, f1 = edge_binary_metrics(
                    (probs >= args.threshold).astype(int), labels)
                ece, _ = calibration_report(probs, labels)
                row = (size, seed,
                       f"{panoptic_quality(pairs).pq:.6f}",
                       f"{panoptic_quality(pairs, stock).pq:.6f}",
                       f"{recognition_localization_accuracy(pairs):.6f}",
                       f"{acc:.6f}", f"{f1:.6f}", f"{ece:.6f}")
                writer.writerow(row)
                fh.flush()
                log.info("sweep size=%d seed=%d pq=%s", size, seed, row[2])
    log.info("sweep CSV -> %s", args.out)
    return 0


def cmd_inspect(args) -> int:
    parts = _load_split(args.data, "all")
    match = [g for g in parts if g.part_id == args.part]
    if not match:
        raise PafrError(f"no part named {args.part!r} in {args.data}")
    g = match[0]
    classes = g.header.classes
    print(f"part {g.part_id}: {g.n} faces, {g.m} edges")
    surf = {}
    for f in g.faces:
        surf[f.surface_type] = surf.get(f.surface_type, 0) + 1
    print("  surface types:", ", ".join(f"{k}={v}" for k, v in sorted(surf.items())))
    labeled = all(f.instance_id is not None for f in g.faces)
    if labeled:
        insts = ground_truth_instances(g, split=False)
        print(f"  {len(insts)} ground-truth instances:")
        for faces, cls in insts:
            name = classes[cls] if cls < len(classes) else str(cls)
            print(f"    {name:<14} {len(faces)} faces {sorted(faces)}")
        y = binary_edge_labels(g)
        print(f"  boundary edges: {int((y == 0).sum())} of {g.m}")
        report = validate_instances(g)
        if report.disconnected_instances:
            print("  WARNING: disconnected instance ids:",
                  sorted(report.disconnected_instances))
        else:
            print("  validation: all instances connected")
    else:
        print("  unlabeled part (no ground truth)")
    return 0


# ---------------------------------------------------------------------------
# parser

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads inside training/inference (default 1)")
    common.add_argument("--quiet", action="store_true", help="warnings only")

    def add_train_flags(p):
        p.add_argument("--trees-binary", type=int, default=200)
        p.add_argument("--trees-multiclass", type=int, default=400)
        p.add_argument("--depth-binary", type=int, default=6)
        p.add_argument("--depth-multiclass", type=int, default=6)
        p.add_argument("--learning-rate", type=float, default=0.1)
        p.add_argument("--lambda-l2", type=float, default=1.0)
        p.add_argument("--min-child-hessian", type=float, default=1.0)
        p.add_argument("--folds", type=int, default=3)
        p.add_argument("--threshold", type=float, default=0.5,
                       help="same-instance probability cut tau")
        p.add_argument("--seed", type=int, default=0)

    parser = argparse.ArgumentParser(
        prog="pafr",
        description="Panoptic automatic feature recognition on face-adjacency graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--parts", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--ambiguity", type=float, default=0.1)
    p.add_argument("--features", default="2,8", help="motifs per part as LO,HI")
    p.add_argument("--classes", default=None, help="comma-separated class names")
    p.add_argument("--with-grids", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train the two-stage pipeline")
    p.add_argument("--data", required=True, help="dataset directory or interchange file")
    p.add_argument("--split", default="train", help="train | val | test | all")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--report", default=None, help="training report path (JSON)")
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="run panoptic inference")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="all")
    p.add_argument("--out", required=True, help="output predictions file")
    p.add_argument("--threshold", type=float, default=None,
                   help="override the threshold stored in the model")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="evaluate predictions")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="all")
    p.add_argument("--pred", default=None, help="predictions file from infer")
    p.add_argument("--model", default=None, help="model file (runs inference inline)")
    p.add_argument("--out", default=None, help="JSON report path")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--exclude-classes", default=None,
                   help="comma-separated class names to drop from instance metrics")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common],
                       help="sample-efficiency sweep over train sizes and seeds")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--sizes", default="50,250,1000")
    p.add_argument("--seeds", default="0,1,2")
    add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect", parents=[common], help="print a part summary")
    p.add_argument("--data", required=True)
    p.add_argument("--part", required=True, help="part id")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging(args.quiet)
        _check_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(f"pafr: error: {exc}", file=sys.stderr)
        return 2
    except (PafrError, OSError) as exc:
        print(f"pafr: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
