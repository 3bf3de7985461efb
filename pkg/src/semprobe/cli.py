"""Single `semprobe` executable exposing every pipeline stage.

Exit codes: 0 success, 1 validation/usage error, 2 I/O or file-format error.
Every file-producing subcommand writes a `<output>.manifest.json` recording
the resolved flags, input digests, seed, and tool version.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cocoeval import EvalConfig, evaluate, format_table, split_report
from .errors import FormatError, InputError, SemprobeError, StorageError, ValidationError
from .manifest import write_manifest
from .matcher import (
    DenseFeatureMap,
    Reference,
    Prototype,
    build_prototypes,
    dedup,
    grid_points,
    match_proposals,
)
from .probe import TrainConfig, topk_accuracy, train
from .rle import RleMask
from .store import (
    _read_json,
    _write_json,
    load_annotations,
    load_checkpoint,
    load_detections,
    load_proposals,
    read_tensor,
    save_annotations,
    save_checkpoint,
    save_detections,
    write_tensor,
)
from .synthetic import BlobSpec, PlantedSceneSpec, gen_blobs, gen_planted_scene
from .tsne import ExactTSNE, silhouette, svg_scatter


class Parser(argparse.ArgumentParser):
    """argparse parser that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _default_threads() -> int:
    return os.cpu_count() or 1


def _load_dense_map(map_path, meta_path) -> DenseFeatureMap:
    arr = read_tensor(map_path)
    meta = _read_json(meta_path)
    try:
        dm = DenseFeatureMap(
            features=arr.astype(np.float32),
            image_id=int(meta["image_id"]),
            stride=int(meta["stride"]),
            width=int(meta["width"]),
            height=int(meta["height"]),
        )
    except KeyError as exc:
        raise ValidationError(f"{meta_path}: missing field {exc}") from exc
    return dm.validate()


def _load_references(refs_path, default_stride: int):
    raw = _read_json(refs_path)
    base = Path(refs_path).parent
    entries = raw.get("references")
    if not isinstance(entries, list) or not entries:
        raise ValidationError(f"{refs_path}: needs a non-empty 'references' list")
    refs, input_paths = [], {}
    for i, entry in enumerate(entries):
        map_path = base / entry["map"]
        arr = read_tensor(map_path)
        input_paths[f"reference_map_{i}"] = map_path
        stride = entry.get("stride")
        if stride is None and "meta" in entry:
            meta = _read_json(base / entry["meta"])
            stride = meta.get("stride")
            input_paths[f"reference_meta_{i}"] = base / entry["meta"]
        mask = RleMask.from_dict(entry["mask"])
        refs.append(
            Reference(
                category_id=int(entry["category_id"]),
                features=arr.astype(np.float32),
                mask=mask,
                stride=int(stride) if stride is not None else default_stride,
            )
        )
    return refs, input_paths


def cmd_probe_train(args) -> int:
    t0 = time.perf_counter()
    features = read_tensor(args.features)
    labels = read_tensor(args.labels)
    val_f = read_tensor(args.val_features) if args.val_features else None
    val_l = read_tensor(args.val_labels) if args.val_labels else None
    if (val_f is None) != (val_l is None):
        raise InputError("--val-features and --val-labels must be given together")
    num_classes = args.num_classes or int(labels.max()) + 1
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        seed=args.seed,
        shuffle=not args.no_shuffle,
    )
    weights, bias, history = train(
        features, labels, num_classes, config, val_features=val_f, val_labels=val_l
    )
    for rec in history:
        line = f"epoch {rec['epoch']:3d}  train_loss {rec['train_loss']:.6f}"
        if rec["val_top1"] is not None:
            line += f"  val_top1 {rec['val_top1']:.4f}"
        print(line)
    save_checkpoint(args.out, weights, bias)
    outputs = {"model": args.out}
    if args.report:
        _write_json(
            args.report,
            {
                "num_classes": num_classes,
                "dim": int(features.shape[1]),
                "num_examples": int(features.shape[0]),
                "config": vars(config),
                "epochs": history,
            },
        )
        outputs["report"] = args.report
    inputs = {"features": args.features, "labels": args.labels}
    if val_f is not None:
        inputs["val_features"] = args.val_features
        inputs["val_labels"] = args.val_labels
    write_manifest(
        args.out, "probe train", _flags(args), inputs, outputs,
        args.seed, time.perf_counter() - t0,
    )
    return 0


def cmd_probe_eval(args) -> int:
    weights, bias = load_checkpoint(args.model)
    features = read_tensor(args.features)
    labels = read_tensor(args.labels)
    ks = [int(k) for k in args.topk.split(",") if k]
    results = {f"top{k}": topk_accuracy(weights, bias, features, labels, k) for k in ks}
    for name, acc in results.items():
        print(f"{name} {acc:.4f}")
    if args.report:
        _write_json(args.report, results)
        write_manifest(
            args.report, "probe eval", _flags(args),
            {"model": args.model, "features": args.features, "labels": args.labels},
            {"report": args.report}, None, 0.0,
        )
    return 0


def cmd_proto_build(args) -> int:
    t0 = time.perf_counter()
    refs, input_paths = _load_references(args.refs, args.stride)
    prototypes = build_prototypes(refs, args.stride)
    mat = np.stack([p.vector for p in prototypes]).astype(np.float32)
    write_tensor(args.out, mat)
    meta_path = str(args.out) + ".meta.json"
    _write_json(
        meta_path,
        {
            "category_ids": [p.category_id for p in prototypes],
            "source_refs": [p.source_ref for p in prototypes],
        },
    )
    print(f"built {len(prototypes)} prototypes (dim {mat.shape[1]}) -> {args.out}")
    input_paths["refs"] = args.refs
    write_manifest(
        args.out, "proto build", _flags(args), input_paths,
        {"prototypes": args.out, "meta": meta_path}, None, time.perf_counter() - t0,
    )
    return 0


def _load_prototypes(protos_path):
    mat = read_tensor(protos_path)
    meta = _read_json(str(protos_path) + ".meta.json")
    cats = meta["category_ids"]
    if len(cats) != mat.shape[0]:
        raise ValidationError(
            f"{protos_path}: {mat.shape[0]} prototype rows but {len(cats)} category ids"
        )
    return [
        Prototype(category_id=int(c), vector=mat[i].astype(np.float32),
                  source_ref=int(meta.get("source_refs", list(range(len(cats))))[i]))
        for i, c in enumerate(cats)
    ]


def cmd_match_run(args) -> int:
    t0 = time.perf_counter()
    dense = _load_dense_map(args.target_map, args.target_meta)
    proposals = load_proposals(args.proposals)
    for p in proposals:
        if p.image_id != dense.image_id:
            raise ValidationError(
                f"proposal image id {p.image_id} does not match target image "
                f"{dense.image_id}"
            )
    prototypes = _load_prototypes(args.protos)
    matched = match_proposals(
        proposals, prototypes, dense.features, dense.stride,
        sim_threshold=args.sim_threshold, threads=args.threads,
    )
    detections = dedup(matched, args.nms_iou)
    save_detections(args.out, detections)
    print(
        f"{len(proposals)} proposals -> {len(matched)} matched -> "
        f"{len(detections)} detections after NMS"
    )
    write_manifest(
        args.out, "match run", _flags(args),
        {
            "target_map": args.target_map,
            "target_meta": args.target_meta,
            "proposals": args.proposals,
            "prototypes": args.protos,
        },
        {"detections": args.out}, None, time.perf_counter() - t0,
    )
    return 0


def cmd_grid(args) -> int:
    t0 = time.perf_counter()
    points = grid_points(args.width, args.height, args.points_per_side)
    _write_json(
        args.out,
        {
            "width": args.width,
            "height": args.height,
            "points_per_side": args.points_per_side,
            "points": [[x, y] for x, y in points],
        },
    )
    print(f"{len(points)} grid points -> {args.out}")
    write_manifest(
        args.out, "grid", _flags(args), {}, {"points": args.out},
        None, time.perf_counter() - t0,
    )
    return 0


def cmd_eval_coco(args) -> int:
    t0 = time.perf_counter()
    dets = load_detections(args.dets)
    gts = load_annotations(args.gt)
    config = EvalConfig(iou_type=args.iou_type, max_detections=args.max_detections)
    result = evaluate(dets, gts, config)
    print(format_table(result, args.iou_type))
    report = {"iou_type": args.iou_type, **result.to_dict()}
    if args.splits:
        splits = _read_json(args.splits)
        rows = split_report(result, splits.get("base", []), splits.get("novel", []))
        report["splits"] = {}
        for name, row in rows.items():
            pct = (lambda v: f"{100.0 * v:6.1f}" if v is not None else "   n/a")
            print(
                f"{row.name:<6} categories evaluated: {row.num_evaluated:3d}  "
                f"AP {pct(row.ap)}  AP50 {pct(row.ap50)}  AP75 {pct(row.ap75)}  AR {pct(row.ar)}"
            )
            report["splits"][name] = {
                "num_evaluated": row.num_evaluated,
                "ap": row.ap, "ap50": row.ap50, "ap75": row.ap75, "ar": row.ar,
            }
    if args.report:
        _write_json(args.report, report)
        inputs = {"detections": args.dets, "ground_truth": args.gt}
        if args.splits:
            inputs["splits"] = args.splits
        write_manifest(
            args.report, "eval coco", _flags(args), inputs,
            {"report": args.report}, None, time.perf_counter() - t0,
        )
    return 0


def cmd_tsne(args) -> int:
    t0 = time.perf_counter()
    features = read_tensor(args.features)
    labels = read_tensor(args.labels) if args.labels else None
    model = ExactTSNE(
        perplexity=args.perplexity,
        iterations=args.iterations,
        learning_rate=args.learning_rate,
        seed=args.seed,
        l2_normalize=args.l2_normalize,
        pca_dims=args.pca_dims,
    )
    points = model.fit_transform(features)
    write_tensor(args.out, points.astype(np.float32))
    report = {
        "final_kl": model.kl_divergence_,
        "kl_post_exaggeration": model.kl_post_exaggeration_,
        "silhouette": silhouette(points, labels) if labels is not None else None,
    }
    print(f"final_kl {report['final_kl']:.6f}")
    if report["silhouette"] is not None:
        print(f"silhouette {report['silhouette']:.4f}")
    outputs = {"embedding": args.out}
    if args.svg:
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(svg_scatter(points, labels))
        outputs["svg"] = args.svg
    if args.report:
        _write_json(args.report, report)
        outputs["report"] = args.report
    inputs = {"features": args.features}
    if args.labels:
        inputs["labels"] = args.labels
    write_manifest(
        args.out, "tsne", _flags(args), inputs, outputs,
        args.seed, time.perf_counter() - t0,
    )
    return 0


def cmd_synth_blobs(args) -> int:
    t0 = time.perf_counter()
    spec = BlobSpec(
        num_classes=args.classes,
        dim=args.dim,
        per_class=args.per_class,
        separation=args.separation,
        seed=args.seed,
    )
    fm, lv = gen_blobs(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = fm.features.shape[0]
    n_val = int(round(args.val_fraction * n))
    outputs = {}
    if n_val > 0:
        write_tensor(out / "train_features.tnsr", fm.features[n_val:])
        write_tensor(out / "train_labels.tnsr", lv.labels[n_val:])
        write_tensor(out / "val_features.tnsr", fm.features[:n_val])
        write_tensor(out / "val_labels.tnsr", lv.labels[:n_val])
        outputs = {
            "train_features": out / "train_features.tnsr",
            "train_labels": out / "train_labels.tnsr",
            "val_features": out / "val_features.tnsr",
            "val_labels": out / "val_labels.tnsr",
        }
    else:
        write_tensor(out / "features.tnsr", fm.features)
        write_tensor(out / "labels.tnsr", lv.labels)
        outputs = {"features": out / "features.tnsr", "labels": out / "labels.tnsr"}
    write_tensor(out / "ids.tnsr", fm.ids)
    outputs["ids"] = out / "ids.tnsr"
    print(f"{n} points, {spec.num_classes} classes -> {out}")
    write_manifest(
        out / "blobs", "synth blobs", _flags(args), {}, outputs,
        args.seed, time.perf_counter() - t0,
    )
    return 0


def cmd_synth_scene(args) -> int:
    t0 = time.perf_counter()
    spec = PlantedSceneSpec(
        width=args.width,
        height=args.height,
        stride=args.stride,
        dim=args.dim,
        num_categories=args.categories,
        num_objects=args.objects,
        num_distractors=args.distractors,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    scene = gen_planted_scene(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    write_tensor(out / "map.tnsr", scene.feature_map.features)
    _write_json(
        out / "map.meta.json",
        {
            "image_id": scene.feature_map.image_id,
            "stride": scene.feature_map.stride,
            "width": scene.feature_map.width,
            "height": scene.feature_map.height,
        },
    )
    ref_entries = []
    for i, ref in enumerate(scene.references):
        name = f"ref_{i}.tnsr"
        write_tensor(out / name, ref.features)
        ref_entries.append(
            {
                "category_id": ref.category_id,
                "map": name,
                "mask": ref.mask.to_dict(),
                "stride": ref.stride,
            }
        )
    _write_json(out / "refs.json", {"references": ref_entries})
    _write_json(
        out / "props.json",
        [
            {
                "image_id": p.image_id,
                "score": p.objectness,
                "segmentation": p.mask.to_dict(),
            }
            for p in scene.proposals
        ],
    )
    save_annotations(out / "gt.json", scene.annotations)
    print(
        f"scene with {len(scene.annotations.annotations)} objects, "
        f"{len(scene.proposals)} proposals -> {out}"
    )
    write_manifest(
        out / "scene", "synth scene", _flags(args), {},
        {
            "map": out / "map.tnsr",
            "map_meta": out / "map.meta.json",
            "refs": out / "refs.json",
            "proposals": out / "props.json",
            "ground_truth": out / "gt.json",
        },
        args.seed, time.perf_counter() - t0,
    )
    return 0


def _flags(args) -> dict:
    skip = {"func"}
    return {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in vars(args).items()
        if k not in skip
    }


def build_parser() -> Parser:
    parser = Parser(prog="semprobe", description=__doc__)
    parser.add_argument("--version", action="version", version=f"semprobe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    probe = sub.add_parser("probe", help="linear-probe training and evaluation")
    probe_sub = probe.add_subparsers(dest="probe_command", required=True, parser_class=Parser)

    pt = probe_sub.add_parser("train", help="train a linear probe on frozen features")
    pt.add_argument("--features", required=True)
    pt.add_argument("--labels", required=True)
    pt.add_argument("--val-features")
    pt.add_argument("--val-labels")
    pt.add_argument("--epochs", type=int, default=10)
    pt.add_argument("--batch-size", type=int, default=128)
    pt.add_argument("--lr", type=float, default=1e-3)
    pt.add_argument("--weight-decay", type=float, default=0.0)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--no-shuffle", action="store_true")
    pt.add_argument("--num-classes", type=int)
    pt.add_argument("--threads", type=int, default=_default_threads())
    pt.add_argument("--out", required=True)
    pt.add_argument("--report")
    pt.set_defaults(func=cmd_probe_train)

    pe = probe_sub.add_parser("eval", help="top-k accuracy of a saved probe")
    pe.add_argument("--model", required=True)
    pe.add_argument("--features", required=True)
    pe.add_argument("--labels", required=True)
    pe.add_argument("--topk", default="1,5")
    pe.add_argument("--report")
    pe.set_defaults(func=cmd_probe_eval)

    pb = sub.add_parser("proto", help="prototype construction")
    pb_sub = pb.add_subparsers(dest="proto_command", required=True, parser_class=Parser)
    pbb = pb_sub.add_parser("build", help="build prototypes from annotated references")
    pbb.add_argument("--refs", required=True)
    pbb.add_argument("--stride", type=int, default=14)
    pbb.add_argument("--out", required=True)
    pbb.set_defaults(func=cmd_proto_build)

    mr = sub.add_parser("match", help="match proposals against prototypes")
    mr_sub = mr.add_subparsers(dest="match_command", required=True, parser_class=Parser)
    mrr = mr_sub.add_parser("run", help="label one target image's proposals")
    mrr.add_argument("--target-map", required=True)
    mrr.add_argument("--target-meta", required=True)
    mrr.add_argument("--proposals", required=True)
    mrr.add_argument("--protos", required=True)
    mrr.add_argument("--sim-threshold", type=float, default=0.5)
    mrr.add_argument("--nms-iou", type=float, default=0.5)
    mrr.add_argument("--threads", type=int, default=_default_threads())
    mrr.add_argument("--out", required=True)
    mrr.set_defaults(func=cmd_match_run)

    gr = sub.add_parser("grid", help="dense point grid at cell centers")
    gr.add_argument("--width", type=int, required=True)
    gr.add_argument("--height", type=int, required=True)
    gr.add_argument("--points-per-side", type=int, default=32)
    gr.add_argument("--out", required=True)
    gr.set_defaults(func=cmd_grid)

    ev = sub.add_parser("eval", help="COCO-protocol evaluation")
    ev_sub = ev.add_subparsers(dest="eval_command", required=True, parser_class=Parser)
    evc = ev_sub.add_parser("coco", help="AP/AR for detections against ground truth")
    evc.add_argument("--dets", required=True)
    evc.add_argument("--gt", required=True)
    evc.add_argument("--iou-type", choices=("box", "mask"), default="mask")
    evc.add_argument("--max-detections", type=int, default=100)
    evc.add_argument("--splits")
    evc.add_argument("--threads", type=int, default=_default_threads())
    evc.add_argument("--report")
    evc.set_defaults(func=cmd_eval_coco)

    ts = sub.add_parser("tsne", help="exact t-SNE embedding to 2-D")
    ts.add_argument("--features", required=True)
    ts.add_argument("--labels")
    ts.add_argument("--perplexity", type=float, default=30.0)
    ts.add_argument("--iterations", type=int, default=1000)
    ts.add_argument("--learning-rate", type=float, default=200.0)
    ts.add_argument("--seed", type=int, default=0)
    ts.add_argument("--l2-normalize", action="store_true")
    ts.add_argument("--pca-dims", type=int)
    ts.add_argument("--out", required=True)
    ts.add_argument("--svg")
    ts.add_argument("--report")
    ts.set_defaults(func=cmd_tsne)

    sy = sub.add_parser("synth", help="synthetic fixture generation")
    sy_sub = sy.add_subparsers(dest="synth_command", required=True, parser_class=Parser)

    sb = sy_sub.add_parser("blobs", help="Gaussian blob features and labels")
    sb.add_argument("--classes", type=int, default=10)
    sb.add_argument("--dim", type=int, default=64)
    sb.add_argument("--per-class", type=int, default=500)
    sb.add_argument("--separation", type=float, default=6.0)
    sb.add_argument("--val-fraction", type=float, default=0.0)
    sb.add_argument("--seed", type=int, default=0)
    sb.add_argument("--out-dir", required=True)
    sb.set_defaults(func=cmd_synth_blobs)

    sc = sy_sub.add_parser("scene", help="planted scene with references and proposals")
    sc.add_argument("--width", type=int, default=224)
    sc.add_argument("--height", type=int, default=224)
    sc.add_argument("--stride", type=int, default=14)
    sc.add_argument("--dim", type=int, default=128)
    sc.add_argument("--categories", type=int, default=3)
    sc.add_argument("--objects", type=int, default=6)
    sc.add_argument("--distractors", type=int, default=4)
    sc.add_argument("--noise-sigma", type=float, default=0.1)
    sc.add_argument("--seed", type=int, default=0)
    sc.add_argument("--out-dir", required=True)
    sc.set_defaults(func=cmd_synth_scene)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args) or 0
    except SystemExit as exc:  # argparse --help / usage errors
        code = exc.code
        return int(code) if code is not None else 0
    except (StorageError, FormatError) as exc:
        print(f"semprobe: error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, InputError) as exc:
        print(f"semprobe: error: {exc}", file=sys.stderr)
        return 1
    except SemprobeError as exc:
        print(f"semprobe: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
