"""`xtract`: export encoder features, dense maps, and proposals.

Exit codes: 0 success, 1 usage/data error, 2 missing checkpoint.
"""
from __future__ import annotations

import argparse
import json
import sys

from .backends import available, get_backend
from .datasets import scan_class_folders
from .errors import CheckpointError, ExtractError
from .export import export_dense_map, export_global_features, export_proposals
from .tnsr import write_json


def _backend_from_args(args):
    opts = {}
    if getattr(args, "sam_stage", None) and args.model == "sam":
        opts["stage"] = args.sam_stage
    return get_backend(args.model, checkpoint=args.checkpoint, **opts)


def cmd_export_features(args) -> int:
    paths, labels, names = scan_class_folders(args.data_dir, args.limit_per_class)
    backend = _backend_from_args(args)
    info = export_global_features(
        backend, paths, labels, args.out_dir,
        resolution=args.resolution, batch_size=args.batch_size,
        dataset_slice=f"{args.data_dir} (limit {args.limit_per_class})",
    )
    write_json(f"{args.out_dir}/label_names.json", names)
    print(f"{info['features'][0]} images, dim {info['features'][1]} -> {info['out_dir']}")
    return 0


def cmd_export_dense(args) -> int:
    backend = _backend_from_args(args)
    info = export_dense_map(
        backend, args.image, args.image_id, args.out, resolution=args.resolution
    )
    print(f"grid {info['grid'][0]}x{info['grid'][1]}, stride {info['stride']} -> {args.out}")
    return 0


def cmd_export_proposals(args) -> int:
    with open(args.points, "r", encoding="utf-8") as fh:
        grid = json.load(fh)
    backend = _backend_from_args(args)
    info = export_proposals(
        backend, args.image, args.image_id, grid["points"], args.out,
        resolution=args.resolution,
        points_space=(grid["width"], grid["height"]),
    )
    print(f"{info['num_proposals']} proposals -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xtract", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", required=True, choices=available())
        p.add_argument("--checkpoint", help="override the default checkpoint id")
        p.add_argument("--resolution", type=int,
                       help="input side length; defaults to the model's protocol value")
        p.add_argument("--sam-stage", choices=("pre_neck", "post_neck"),
                       default="pre_neck",
                       help="which SAM encoder stage supplies features")

    ef = sub.add_parser("export-features", help="global feature matrix for a dataset")
    common(ef)
    ef.add_argument("--data-dir", required=True,
                    help="directory with one subdirectory per class")
    ef.add_argument("--limit-per-class", type=int)
    ef.add_argument("--batch-size", type=int, default=16)
    ef.add_argument("--out-dir", required=True)
    ef.set_defaults(func=cmd_export_features)

    ed = sub.add_parser("export-dense", help="dense patch map for one image")
    common(ed)
    ed.add_argument("--image", required=True)
    ed.add_argument("--image-id", type=int, required=True)
    ed.add_argument("--out", required=True)
    ed.set_defaults(func=cmd_export_dense)

    ep = sub.add_parser("export-proposals", help="per-point mask proposals")
    common(ep)
    ep.add_argument("--image", required=True)
    ep.add_argument("--image-id", type=int, required=True)
    ep.add_argument("--points", required=True,
                    help="grid file produced by `semprobe grid`")
    ep.add_argument("--out", required=True)
    ep.set_defaults(func=cmd_export_proposals)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args) or 0
    except SystemExit as exc:
        code = exc.code
        return int(code) if code is not None else 0
    except CheckpointError as exc:
        print(f"xtract: error: {exc}", file=sys.stderr)
        return 2
    except ExtractError as exc:
        print(f"xtract: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
